//! Hierarchical four-stage backbone: presets, overlapping patch merges,
//! conditional position encoding, classification head and checkpoints.

pub mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load, save, Manifest, ManifestEntry};
pub use config::{
    expand_block_pattern, linear_droppath, preset, BlockKind, MergeConfig, MergeKind, ModelConfig, StageConfig,
    PRESETS,
};
pub use model::{Block, Cpe, MergeConv, PatchMerge, SepVit, Stage};
