use super::config::{BlockKind, MergeConfig, MergeKind, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvInit, Forward, LayerNorm, Linear, Module, Param};
use crate::sepvit::{sepvit_block, BlockParams, WindowLayout};
use crate::tensor::{macs, Scalar, SplitMix64, Tape, Tensor, Var};

const NCHW_TO_NHWC: [usize; 4] = [0, 2, 3, 1];
const NHWC_TO_NCHW: [usize; 4] = [0, 3, 1, 2];

#[derive(Clone, Debug)]
pub enum MergeConv<T> {
    Dense(Conv2d<T>),
    Separable { depthwise: Conv2d<T>, pointwise: Conv2d<T> },
}

/// Overlapping patch merge: strided convolution then LN over channels.
#[derive(Clone, Debug)]
pub struct PatchMerge<T> {
    pub conv: MergeConv<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Scalar> PatchMerge<T> {
    pub fn new(name: &str, c_in: usize, c_out: usize, cfg: &MergeConfig, rng: &mut SplitMix64) -> Self {
        let (k, s, p) = (cfg.kernel, cfg.stride, cfg.padding);
        let conv = match cfg.kind {
            MergeKind::Dense => MergeConv::Dense(Conv2d::new(&format!("{name}.conv"), c_in, c_out, k, s, p, 1, ConvInit::Xavier, rng)),
            MergeKind::Separable => MergeConv::Separable {
                depthwise: Conv2d::new(&format!("{name}.dw"), c_in, c_in, k, s, p, c_in, ConvInit::Xavier, rng),
                pointwise: Conv2d::new(&format!("{name}.pw"), c_in, c_out, 1, 1, 0, 1, ConvInit::Xavier, rng),
            },
        };
        Self {
            conv,
            norm: LayerNorm::new(&format!("{name}.norm"), c_out),
        }
    }

    /// `[B, C_in, H, W] → [B, H/s, W/s, C_out]`.
    pub fn forward_nhwc<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = match &self.conv {
            MergeConv::Dense(conv) => conv.forward(ctx, x)?,
            MergeConv::Separable { depthwise, pointwise } => pointwise.forward(ctx, &depthwise.forward(ctx, x)?)?,
        };
        self.norm.forward(ctx, &y.permute(&NCHW_TO_NHWC)?)
    }

    /// `[B, C_in, H, W] → [B, C_out, H/s, W/s]`.
    pub fn forward<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.forward_nhwc(ctx, x)?.permute(&NHWC_TO_NCHW)
    }
}

impl<T: Scalar> Module<T> for PatchMerge<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match &self.conv {
            MergeConv::Dense(c) => c.visit(f),
            MergeConv::Separable { depthwise, pointwise } => {
                depthwise.visit(f);
                pointwise.visit(f);
            }
        }
        self.norm.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match &mut self.conv {
            MergeConv::Dense(c) => c.visit_mut(f),
            MergeConv::Separable { depthwise, pointwise } => {
                depthwise.visit_mut(f);
                pointwise.visit_mut(f);
            }
        }
        self.norm.visit_mut(f);
    }
}

/// Conditional position encoding: `x + DepthwiseConv3×3(x)`, zero-initialised.
#[derive(Clone, Debug)]
pub struct Cpe<T> {
    pub conv: Conv2d<T>,
}

impl<T: Scalar> Cpe<T> {
    pub fn new(name: &str, channels: usize, rng: &mut SplitMix64) -> Self {
        Self {
            conv: Conv2d::new(name, channels, channels, 3, 1, 1, channels, ConvInit::Zeros, rng),
        }
    }

    /// `[B, C, H, W] → [B, C, H, W]`.
    pub fn forward<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.add(&self.conv.forward(ctx, x)?)
    }
}

impl<T: Scalar> Module<T> for Cpe<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct Block<T> {
    pub kind: BlockKind,
    pub layout: WindowLayout,
    pub drop_rate: f64,
    pub params: BlockParams<T>,
}

#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub merge: PatchMerge<T>,
    pub blocks: Vec<Block<T>>,
    pub cpe: Cpe<T>,
}

impl<T: Scalar> Stage<T> {
    /// `[B, C_in, H, W] → [B, H/s, W/s, C]`; CPE runs after the first block.
    fn forward<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = {
            let _s = macs::scope("merge");
            self.merge.forward_nhwc(ctx, x)?
        };
        let cpe = |h: &Var<'t, T>| -> Result<Var<'t, T>> {
            let _s = macs::scope("cpe");
            self.cpe.forward(ctx, &h.permute(&NHWC_TO_NCHW)?)?.permute(&NCHW_TO_NHWC)
        };
        if self.blocks.is_empty() {
            return cpe(&h);
        }
        for (j, block) in self.blocks.iter().enumerate() {
            {
                let _s = macs::scope(format!("block{j}"));
                h = sepvit_block(ctx, &h, &block.params, &block.layout, block.drop_rate)?;
            }
            if j == 0 {
                h = cpe(&h)?;
            }
        }
        Ok(h)
    }
}

impl<T: Scalar> Module<T> for Stage<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.merge.visit(f);
        for b in &self.blocks {
            b.params.visit(f);
        }
        self.cpe.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.merge.visit_mut(f);
        for b in &mut self.blocks {
            b.params.visit_mut(f);
        }
        self.cpe.visit_mut(f);
    }
}

/// Four-stage separable vision transformer with a GAP → LN → linear head.
#[derive(Clone, Debug)]
pub struct SepVit<T> {
    pub config: ModelConfig,
    pub stages: Vec<Stage<T>>,
    pub head_norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> SepVit<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sides = config.stage_sides()?;
        let mut rng = SplitMix64::new(seed);
        let mut c_in = config.in_channels;
        let mut stages = Vec::with_capacity(4);
        for (i, (sc, &side)) in config.stages.iter().zip(&sides).enumerate() {
            let name = format!("stages.{i}");
            let merge = PatchMerge::new(&format!("{name}.merge"), c_in, sc.channels, &sc.merge, &mut rng);
            let mut blocks = Vec::with_capacity(sc.depth);
            for (j, (&kind, &drop_rate)) in sc.block_pattern.iter().zip(&sc.droppath_rates).enumerate() {
                let layout = WindowLayout::new(side, side, sc.window, if kind == BlockKind::Gsa { sc.group } else { 1 })?;
                let params = BlockParams::new(
                    &format!("{name}.blocks.{j}"),
                    sc.channels,
                    sc.heads,
                    layout.num_windows(),
                    config.mlp_ratio,
                    config.token_mode,
                    &mut rng,
                )?;
                blocks.push(Block {
                    kind,
                    layout,
                    drop_rate,
                    params,
                });
            }
            let cpe = Cpe::new(&format!("{name}.cpe"), sc.channels, &mut rng);
            stages.push(Stage { merge, blocks, cpe });
            c_in = sc.channels;
        }
        Ok(Self {
            config: config.clone(),
            stages,
            head_norm: LayerNorm::new("head.norm", c_in),
            head: Linear::new("head.fc", c_in, config.num_classes, &mut rng),
        })
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, r) = (self.config.in_channels, self.config.input_resolution);
        if shape.len() != 4 || shape[1] != c || shape[2] != r || shape[3] != r {
            return Err(Error::Shape(format!(
                "model `{}` expects images [B, {c}, {r}, {r}], got {shape:?}",
                self.config.name
            )));
        }
        Ok(())
    }

    /// Per-stage outputs, each `[B, H_i, W_i, C_i]`.
    pub fn forward_features<'t>(&self, ctx: &Forward<'t, T>, images: &Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        self.check_input(&images.shape())?;
        let mut x = *images;
        let mut outs = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let _s = macs::scope(format!("stage{}", i + 1));
            let h = stage.forward(ctx, &x)?;
            x = h.permute(&NHWC_TO_NCHW)?;
            outs.push(h);
        }
        Ok(outs)
    }

    /// `[B, 3, R, R] → [B, num_classes]`.
    pub fn forward<'t>(&self, ctx: &Forward<'t, T>, images: &Var<'t, T>) -> Result<Var<'t, T>> {
        let feats = self.forward_features(ctx, images)?;
        let last = feats.last().expect("four stages");
        let s = last.shape();
        let pooled = last.reshape(&[s[0], s[1] * s[2], s[3]])?.mean_axis(1)?;
        let _s = macs::scope("head");
        self.head.forward(ctx, &self.head_norm.forward(ctx, &pooled)?)
    }

    /// Inference-mode logits for a batch of images.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let ctx = Forward::inference(&tape);
        let logits = self.forward(&ctx, &tape.constant(images.clone()))?;
        Ok((*logits.value()).clone())
    }
}

impl<T: Scalar> Module<T> for SepVit<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        for s in &self.stages {
            s.visit(f);
        }
        self.head_norm.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for s in &mut self.stages {
            s.visit_mut(f);
        }
        self.head_norm.visit_mut(f);
        self.head.visit_mut(f);
    }
}
