use serde::{Deserialize, Serialize};

use super::layout::{concat_window_tokens, slice_tokens, window_partition, window_reverse, WindowLayout};
use crate::error::{Error, Result};
use crate::nn::{Forward, LayerNorm, Linear, Module, Param};
use crate::tensor::{macs, Scalar, SplitMix64, Tensor, Var};

/// How window tokens are initialised and whether they learn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenMode {
    /// Zero vectors that never receive gradient.
    FixedZero,
    /// Zero-initialised, trained like any other parameter.
    #[default]
    Learnable,
}

/// One token per window, `[N, C]`, all zero at construction.
#[derive(Clone, Debug)]
pub struct WindowTokens<T> {
    pub param: Param<T>,
    pub mode: TokenMode,
}

impl<T: Scalar> WindowTokens<T> {
    pub fn new(name: &str, num_windows: usize, channels: usize, mode: TokenMode) -> Self {
        let value = Tensor::zeros(&[num_windows, channels]);
        let param = match mode {
            TokenMode::FixedZero => Param::frozen(name, value),
            TokenMode::Learnable => Param::new(name, value),
        };
        Self { param, mode }
    }

    pub fn num_windows(&self) -> usize {
        self.param.value.shape()[0]
    }
}

/// Learnable state of one separable attention block.
///
/// The pixel/window-token projections `q`, `k`, `v` feed depthwise attention;
/// `pwa_q`, `pwa_k` project the normalised window tokens for pointwise
/// attention, whose value branch is the raw feature map. The only output
/// projection sits after pointwise attention.
#[derive(Clone, Debug)]
pub struct BlockParams<T> {
    pub channels: usize,
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub pwa_q: Linear<T>,
    pub pwa_k: Linear<T>,
    pub out_proj: Linear<T>,
    pub norm1: LayerNorm<T>,
    pub norm2: LayerNorm<T>,
    pub token_norm: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub window_tokens: WindowTokens<T>,
}

impl<T: Scalar> BlockParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        channels: usize,
        heads: usize,
        num_windows: usize,
        mlp_ratio: usize,
        mode: TokenMode,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split across {heads} heads"
            )));
        }
        let c = channels;
        Ok(Self {
            channels,
            heads,
            q: Linear::new(&format!("{name}.dwa.q"), c, c, rng),
            k: Linear::new(&format!("{name}.dwa.k"), c, c, rng),
            v: Linear::new(&format!("{name}.dwa.v"), c, c, rng),
            pwa_q: Linear::new(&format!("{name}.pwa.q"), c, c, rng),
            pwa_k: Linear::new(&format!("{name}.pwa.k"), c, c, rng),
            out_proj: Linear::new(&format!("{name}.pwa.proj"), c, c, rng),
            norm1: LayerNorm::new(&format!("{name}.norm1"), c),
            norm2: LayerNorm::new(&format!("{name}.norm2"), c),
            token_norm: LayerNorm::new(&format!("{name}.pwa.norm"), c),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), c, mlp_ratio * c, rng),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), mlp_ratio * c, c, rng),
            window_tokens: WindowTokens::new(&format!("{name}.window_tokens"), num_windows, c, mode),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

impl<T: Scalar> Module<T> for BlockParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for l in [&self.q, &self.k, &self.v, &self.pwa_q, &self.pwa_k, &self.out_proj] {
            l.visit(f);
        }
        for n in [&self.norm1, &self.norm2, &self.token_norm] {
            n.visit(f);
        }
        self.fc1.visit(f);
        self.fc2.visit(f);
        f(&self.window_tokens.param);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for l in [
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.pwa_q,
            &mut self.pwa_k,
            &mut self.out_proj,
        ] {
            l.visit_mut(f);
        }
        for n in [&mut self.norm1, &mut self.norm2, &mut self.token_norm] {
            n.visit_mut(f);
        }
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
        f(&mut self.window_tokens.param);
    }
}

/// Depthwise attention: independent multi-head attention inside each window
/// over its pixel tokens and its window token. `z: [B, N, S+1, C]`.
pub fn dwa<'t, T: Scalar>(ctx: &Forward<'t, T>, z: &Var<'t, T>, params: &BlockParams<T>) -> Result<Var<'t, T>> {
    let s = z.shape();
    if s.len() != 4 || s[3] != params.channels {
        return Err(Error::Shape(format!(
            "dwa expects [B, N, T, {}], got {s:?}",
            params.channels
        )));
    }
    let (b, n, t, c) = (s[0], s[1], s[2], s[3]);
    let (h, d) = (params.heads, params.head_dim());
    let split = |x: Var<'t, T>, axes: &[usize]| x.reshape(&[b, n, t, h, d])?.permute(axes);
    let q = split(params.q.forward(ctx, z)?, &[0, 1, 3, 2, 4])?.scale(1.0 / (d as f64).sqrt());
    let k = split(params.k.forward(ctx, z)?, &[0, 1, 3, 4, 2])?;
    let v = split(params.v.forward(ctx, z)?, &[0, 1, 3, 2, 4])?;
    let attn = q.matmul(&k)?.softmax_last()?;
    attn.matmul(&v)?.permute(&[0, 1, 3, 2, 4])?.reshape(&[b, n, t, c])
}

/// Pointwise attention across windows. Returns the output `[B, N, S, C]`
/// and the attention map `[B, heads, N, N]`.
pub fn pwa_with_attention<'t, T: Scalar>(
    ctx: &Forward<'t, T>,
    feat: &Var<'t, T>,
    wt: &Var<'t, T>,
    params: &BlockParams<T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let fs = feat.shape();
    let ws = wt.shape();
    if fs.len() != 4 || ws.len() != 3 || ws[0] != fs[0] || ws[1] != fs[1] || ws[2] != fs[3] || fs[3] != params.channels {
        return Err(Error::Shape(format!(
            "pwa: window tokens {ws:?} do not match features {fs:?}"
        )));
    }
    let (b, n, s, c) = (fs[0], fs[1], fs[2], fs[3]);
    let (h, d) = (params.heads, params.head_dim());
    let t = params.token_norm.forward(ctx, wt)?.gelu();
    let q = params
        .pwa_q
        .forward(ctx, &t)?
        .reshape(&[b, n, h, d])?
        .permute(&[0, 2, 1, 3])?
        .scale(1.0 / (d as f64).sqrt());
    let k = params.pwa_k.forward(ctx, &t)?.reshape(&[b, n, h, d])?.permute(&[0, 2, 3, 1])?;
    let attn = q.matmul(&k)?.softmax_last()?;
    let v = feat
        .reshape(&[b, n, s, h, d])?
        .permute(&[0, 3, 1, 2, 4])?
        .reshape(&[b, h, n, s * d])?;
    let mixed = attn
        .matmul(&v)?
        .reshape(&[b, h, n, s, d])?
        .permute(&[0, 2, 3, 1, 4])?
        .reshape(&[b, n, s, c])?;
    Ok((params.out_proj.forward(ctx, &mixed)?, attn))
}

pub fn pwa<'t, T: Scalar>(
    ctx: &Forward<'t, T>,
    feat: &Var<'t, T>,
    wt: &Var<'t, T>,
    params: &BlockParams<T>,
) -> Result<Var<'t, T>> {
    pwa_with_attention(ctx, feat, wt, params).map(|(out, _)| out)
}

/// Linear → GELU → Linear.
pub fn mlp<'t, T: Scalar>(ctx: &Forward<'t, T>, x: &Var<'t, T>, params: &BlockParams<T>) -> Result<Var<'t, T>> {
    let hidden = params.fc1.forward(ctx, x)?.gelu();
    params.fc2.forward(ctx, &hidden)
}

/// Stochastic depth on a residual branch `[B, ...]`.
fn drop_path<'t, T: Scalar>(ctx: &Forward<'t, T>, branch: Var<'t, T>, rate: f64) -> Result<Var<'t, T>> {
    if !ctx.is_training() || rate <= 0.0 {
        return Ok(branch);
    }
    let shape = branch.shape();
    let keep = 1.0 - rate;
    let mask: Vec<T> = ctx
        .with_rng(|rng| {
            (0..shape[0])
                .map(|_| T::from_f64(if rng.next_f64() < keep { 1.0 / keep } else { 0.0 }))
                .collect()
        })
        .unwrap_or_else(|| vec![T::ONE; shape[0]]);
    let mut mshape = vec![1; shape.len()];
    mshape[0] = shape[0];
    let mask = ctx.tape().constant(Tensor::new(mshape, mask)?);
    branch.mul(&mask)
}

/// Full separable block over `x: [B, H, W, C]`:
/// window partition, token concat, LN, depthwise attention, slice,
/// pointwise attention plus input residual, then LN, MLP plus residual.
pub fn sepvit_block<'t, T: Scalar>(
    ctx: &Forward<'t, T>,
    x: &Var<'t, T>,
    params: &BlockParams<T>,
    layout: &WindowLayout,
    drop_rate: f64,
) -> Result<Var<'t, T>> {
    if params.window_tokens.num_windows() != layout.num_windows() {
        return Err(Error::Layout(format!(
            "block holds {} window tokens but the layout has {} windows",
            params.window_tokens.num_windows(),
            layout.num_windows()
        )));
    }
    let wins = window_partition(x, layout)?;
    let tokens = ctx.bind(&params.window_tokens.param);
    let z = concat_window_tokens(&wins, &tokens)?;
    let z = params.norm1.forward(ctx, &z)?;
    let z = {
        let _s = macs::scope("dwa");
        dwa(ctx, &z, params)?
    };
    let (feat, wt) = slice_tokens(&z)?;
    let mixed = {
        let _s = macs::scope("pwa");
        pwa(ctx, &feat, &wt, params)?
    };
    let branch = drop_path(ctx, window_reverse(&mixed, layout)?, drop_rate)?;
    let x = x.add(&branch)?;
    let normed = params.norm2.forward(ctx, &x)?;
    let m = {
        let _s = macs::scope("mlp");
        mlp(ctx, &normed, params)?
    };
    x.add(&drop_path(ctx, m, drop_rate)?)
}

/// Grouped self-attention block: the separable block evaluated over windows
/// of side `group·window`, each spliced from `group×group` neighbouring base
/// windows, with one window token per spliced window.
pub fn gsa_block<'t, T: Scalar>(
    ctx: &Forward<'t, T>,
    x: &Var<'t, T>,
    params: &BlockParams<T>,
    window: usize,
    group: usize,
    drop_rate: f64,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("gsa_block expects [B, H, W, C], got {s:?}")));
    }
    let layout = WindowLayout::new(s[1], s[2], window, group)?;
    sepvit_block(ctx, x, params, &layout, drop_rate)
}
