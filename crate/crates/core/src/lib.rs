//! Separable vision transformer: window attention blocks with window token
//! embedding, depthwise/pointwise self-attention, grouped self-attention, a
//! four-stage hierarchical backbone, and an analytic/instrumented cost
//! engine.

pub mod analyzer;
pub mod backbone;
pub mod data;
pub mod error;
pub mod nn;
pub mod sepvit;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use tensor::{DType, Scalar, SplitMix64, Tape, Tensor, Var};
