//! Closed-form multiply-accumulate counts. One p×q·q×r product is p·q·r MACs;
//! normalisation, softmax, GELU and scaling count zero.

use crate::error::{Error, Result};

fn windows(h: u64, w: u64, m: u64) -> Result<u64> {
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::Layout(format!(
            "window side {m} does not divide feature map H={h}, W={w}"
        )));
    }
    Ok(h * w / (m * m))
}

/// Global multi-head self-attention: `4HWC² + 2H²W²C`.
pub fn msa_global_cost(h: u64, w: u64, c: u64) -> u64 {
    4 * h * w * c * c + 2 * h * h * w * w * c
}

/// Window multi-head self-attention: `4HWC² + 2M²HWC`.
pub fn window_msa_cost(h: u64, w: u64, c: u64, m: u64) -> Result<u64> {
    windows(h, w, m)?;
    Ok(4 * h * w * c * c + 2 * m * m * h * w * c)
}

/// Depthwise attention with window tokens: `3HWC² + 3NC² + 2N(M²+1)²C`.
pub fn dwa_cost(h: u64, w: u64, c: u64, m: u64) -> Result<u64> {
    let n = windows(h, w, m)?;
    let t = m * m + 1;
    Ok(3 * h * w * c * c + 3 * n * c * c + 2 * n * t * t * c)
}

/// Depthwise attention without window tokens: `3HWC² + 2NM⁴C`.
pub fn dwa_cost_without_tokens(h: u64, w: u64, c: u64, m: u64) -> Result<u64> {
    let n = windows(h, w, m)?;
    Ok(3 * h * w * c * c + 2 * n * m.pow(4) * c)
}

/// Fraction of depthwise attention cost due to the window tokens.
pub fn token_overhead_share(h: u64, w: u64, c: u64, m: u64) -> Result<f64> {
    let with = dwa_cost(h, w, c, m)?;
    let without = dwa_cost_without_tokens(h, w, c, m)?;
    Ok((with - without) as f64 / with as f64)
}

/// Pointwise attention: `HWC² + 2NC² + N²C + NHWC`.
pub fn pwa_cost(h: u64, w: u64, c: u64, m: u64) -> Result<u64> {
    let n = windows(h, w, m)?;
    Ok(h * w * c * c + 2 * n * c * c + n * n * c + n * h * w * c)
}

/// Two-layer MLP with hidden width `ratio·C`.
pub fn mlp_cost(h: u64, w: u64, c: u64, ratio: u64) -> u64 {
    2 * h * w * c * ratio * c
}

/// Cost of one separable block by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockCost {
    pub dwa: u64,
    pub pwa: u64,
    pub mlp: u64,
    /// Layer norms, reported separately and counted as zero.
    pub norm: u64,
}

impl BlockCost {
    pub fn total(&self) -> u64 {
        self.dwa + self.pwa + self.mlp + self.norm
    }
}

pub fn sepvit_block_cost(h: u64, w: u64, c: u64, m: u64, ratio: u64) -> Result<BlockCost> {
    Ok(BlockCost {
        dwa: dwa_cost(h, w, c, m)?,
        pwa: pwa_cost(h, w, c, m)?,
        mlp: mlp_cost(h, w, c, ratio),
        norm: 0,
    })
}

/// Two successive window-attention blocks (each window MSA + MLP), the
/// comparator for one separable block.
pub fn two_window_blocks_cost(h: u64, w: u64, c: u64, m: u64, ratio: u64) -> Result<u64> {
    Ok(2 * (window_msa_cost(h, w, c, m)? + mlp_cost(h, w, c, ratio)))
}
