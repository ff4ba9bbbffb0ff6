use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sepvit::TokenMode;
use crate::tensor::conv2d_output_extent;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Depthwise separable self-attention at window side `M`.
    #[serde(rename = "DSSA")]
    Dssa,
    /// Grouped self-attention at window side `g·M`.
    #[serde(rename = "GSA")]
    Gsa,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Dssa => "DSSA",
            BlockKind::Gsa => "GSA",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    /// One `k×k` convolution from `C_in` to `C_out`.
    Dense,
    /// Depthwise `k×k` convolution followed by a pointwise `1×1`.
    Separable,
}

/// Overlapping patch merge: strided convolution (kernel > stride) then LN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub kind: MergeKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MergeConfig {
    pub fn stem() -> Self {
        Self {
            kind: MergeKind::Dense,
            kernel: 7,
            stride: 4,
            padding: 3,
        }
    }

    pub fn downsample(kind: MergeKind) -> Self {
        Self {
            kind,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    /// Learnable scalars of this merge, including its LN.
    pub fn num_params(&self, c_in: usize, c_out: usize) -> usize {
        let k2 = self.kernel * self.kernel;
        let conv = match self.kind {
            MergeKind::Dense => k2 * c_in * c_out + c_out,
            MergeKind::Separable => k2 * c_in + c_in + c_in * c_out + c_out,
        };
        conv + 2 * c_out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
    pub block_pattern: Vec<BlockKind>,
    pub window: usize,
    pub group: usize,
    pub merge: MergeConfig,
    pub droppath_rates: Vec<f64>,
}

impl StageConfig {
    /// Window side used by a block of the given kind.
    pub fn window_side(&self, kind: BlockKind) -> usize {
        match kind {
            BlockKind::Dssa => self.window,
            BlockKind::Gsa => self.window * self.group,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub in_channels: usize,
    pub input_resolution: usize,
    pub num_classes: usize,
    pub mlp_ratio: usize,
    #[serde(default)]
    pub token_mode: TokenMode,
    pub stages: Vec<StageConfig>,
}

pub const PRESETS: [&str; 5] = ["lite", "tiny", "small", "base", "micro"];

/// Per-stage block types: stages 1 and 4 hold only DSSA, stages 2 and 3
/// alternate DSSA, GSA, DSSA, … (`stage_idx` is 1-based).
pub fn expand_block_pattern(stage_idx: usize, depth: usize) -> Vec<BlockKind> {
    (0..depth)
        .map(|i| {
            if matches!(stage_idx, 2 | 3) && i % 2 == 1 {
                BlockKind::Gsa
            } else {
                BlockKind::Dssa
            }
        })
        .collect()
}

/// Stochastic depth rates rising linearly from 0 to `max` over every block
/// of the network, grouped per stage.
pub fn linear_droppath(depths: &[usize], max: f64) -> Vec<Vec<f64>> {
    let total: usize = depths.iter().sum();
    let rate = |i: usize| if total > 1 { max * i as f64 / (total - 1) as f64 } else { 0.0 };
    let mut start = 0;
    depths
        .iter()
        .map(|&d| {
            let rates = (start..start + d).map(rate).collect();
            start += d;
            rates
        })
        .collect()
}

struct Row {
    depths: [usize; 4],
    channels: [usize; 4],
    heads: [usize; 4],
    window: usize,
    group: usize,
    resolution: usize,
    classes: usize,
}

fn build(name: &str, row: Row) -> ModelConfig {
    let rates = linear_droppath(&row.depths, 0.0);
    let stages = (0..4)
        .map(|s| StageConfig {
            depth: row.depths[s],
            channels: row.channels[s],
            heads: row.heads[s],
            block_pattern: expand_block_pattern(s + 1, row.depths[s]),
            window: row.window,
            group: row.group,
            merge: if s == 0 {
                MergeConfig::stem()
            } else {
                MergeConfig::downsample(MergeKind::Separable)
            },
            droppath_rates: rates[s].clone(),
        })
        .collect();
    ModelConfig {
        name: name.to_string(),
        in_channels: 3,
        input_resolution: row.resolution,
        num_classes: row.classes,
        mlp_ratio: 4,
        token_mode: TokenMode::Learnable,
        stages,
    }
}

/// Named configuration; `micro` is a desk-scale variant for tests and
/// overfitting runs.
pub fn preset(name: &str) -> Result<ModelConfig> {
    let imagenet = |depths, channels, heads| Row {
        depths,
        channels,
        heads,
        window: 7,
        group: 2,
        resolution: 224,
        classes: 1000,
    };
    let row = match name {
        "lite" => imagenet([1, 2, 6, 2], [32, 64, 128, 256], [1, 2, 4, 8]),
        "tiny" => imagenet([1, 2, 6, 2], [96, 192, 384, 768], [3, 6, 12, 24]),
        "small" => imagenet([1, 2, 14, 2], [96, 192, 384, 768], [3, 6, 12, 24]),
        "base" => imagenet([1, 2, 14, 2], [128, 256, 512, 1024], [4, 8, 16, 32]),
        "micro" => Row {
            depths: [1, 2, 2, 1],
            channels: [16, 32, 64, 128],
            heads: [1, 2, 4, 8],
            window: 2,
            group: 2,
            resolution: 64,
            classes: 4,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(build(name, row))
}

impl ModelConfig {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Replace every stage's droppath rates with a linear ramp to `max`.
    pub fn with_droppath(mut self, max: f64) -> Self {
        let depths: Vec<usize> = self.stages.iter().map(|s| s.depth).collect();
        for (stage, rates) in self.stages.iter_mut().zip(linear_droppath(&depths, max)) {
            stage.droppath_rates = rates;
        }
        self
    }

    /// Same architecture at another input side.
    pub fn with_resolution(mut self, resolution: usize) -> Result<Self> {
        self.input_resolution = resolution;
        self.validate()?;
        Ok(self)
    }

    /// Feature-map side after each stage's merge.
    pub fn stage_sides(&self) -> Result<Vec<usize>> {
        let mut side = self.input_resolution;
        let mut sides = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let m = stage.merge;
            if m.stride == 0 || side % m.stride != 0 {
                return Err(Error::Layout(format!(
                    "stage {}: feature side {side} is not divisible by merge stride {}",
                    i + 1,
                    m.stride
                )));
            }
            let out = conv2d_output_extent(side, m.kernel, m.stride, m.padding);
            if out != Some(side / m.stride) {
                return Err(Error::Layout(format!(
                    "stage {}: merge k={} s={} p={} maps side {side} to {out:?}, expected {}",
                    i + 1,
                    m.kernel,
                    m.stride,
                    m.padding,
                    side / m.stride
                )));
            }
            side /= m.stride;
            sides.push(side);
        }
        Ok(sides)
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.stages.len() != 4 {
            return cfg(format!("expected 4 stages, got {}", self.stages.len()));
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.mlp_ratio == 0 {
            return cfg("in_channels, num_classes and mlp_ratio must be positive".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            if s.channels == 0 || s.heads == 0 || s.channels % s.heads != 0 {
                return cfg(format!("stage {n}: {} channels cannot be split across {} heads", s.channels, s.heads));
            }
            if s.block_pattern.len() != s.depth {
                return cfg(format!("stage {n}: block pattern has {} entries for depth {}", s.block_pattern.len(), s.depth));
            }
            if s.droppath_rates.len() != s.depth {
                return cfg(format!("stage {n}: {} droppath rates for depth {}", s.droppath_rates.len(), s.depth));
            }
            if let Some(r) = s.droppath_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
                return cfg(format!("stage {n}: droppath rate {r} outside [0, 1)"));
            }
            if s.window == 0 || s.group == 0 {
                return cfg(format!("stage {n}: window and group must be positive"));
            }
            if s.merge.kernel <= s.merge.stride {
                return cfg(format!(
                    "stage {n}: merge kernel {} must exceed stride {} to overlap",
                    s.merge.kernel, s.merge.stride
                ));
            }
        }
        let sides = self.stage_sides()?;
        for (i, (s, side)) in self.stages.iter().zip(&sides).enumerate() {
            for kind in &s.block_pattern {
                let w = s.window_side(*kind);
                if side % w != 0 {
                    return Err(Error::Layout(format!(
                        "stage {}: {} block needs feature side {side} divisible by window side {w}",
                        i + 1,
                        kind.as_str()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn droppath_ramp() {
        let r = linear_droppath(&[1, 2, 1], 0.3);
        assert_eq!(r[0], vec![0.0]);
        assert!((r[1][0] - 0.1).abs() < 1e-12 && (r[2][0] - 0.3).abs() < 1e-12);
        assert_eq!(linear_droppath(&[1, 0, 0, 0], 0.5), vec![vec![0.0], vec![], vec![], vec![]]);
    }

    #[test]
    fn json_round_trip() {
        let c = preset("micro").unwrap();
        assert_eq!(ModelConfig::from_json_str(&c.to_json(), Path::new("x")).unwrap(), c);
        assert!(c.to_json().contains("\"GSA\""));
    }

    #[test]
    fn parse_errors_carry_location() {
        let text = preset("micro").unwrap().to_json().replace("\"heads\": 2", "\"heads\": \"two\"");
        let err = ModelConfig::from_json_str(&text, Path::new("cfg.json")).unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.category(), "parse");
        assert!(msg.contains("cfg.json") && msg.contains("line"), "{msg}");
    }
}
