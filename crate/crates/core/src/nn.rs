//! Named parameters, the forward-pass context that binds them onto a tape,
//! and the small layers shared by the blocks and the backbone.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::Result;
use crate::tensor::{Gradients, Scalar, SplitMix64, Tape, Tensor, Var};

/// Layer norm epsilon used everywhere.
pub const LN_EPS: f64 = 1e-5;

/// A learnable tensor with a stable dotted name, e.g.
/// `stages.1.blocks.0.dwa.q.weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Frozen parameters (fixed-zero window tokens) are bound as constants.
    pub requires_grad: bool,
    pub grad: Option<Tensor<T>>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            requires_grad: false,
            ..Self::new(name, value)
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Add `g` into the stored gradient.
    pub fn accumulate_grad(&mut self, g: &Tensor<T>) {
        assert_eq!(g.shape(), self.value.shape(), "gradient shape for {}", self.name);
        match self.grad.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.clone()),
        }
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.grad = None);
    }

    /// Add per-name gradients (as produced by [`Forward::gradients`]) into
    /// each parameter's stored gradient.
    fn accumulate_grads(&mut self, grads: &HashMap<String, Tensor<T>>) {
        self.visit_mut(&mut |p| {
            if let Some(g) = grads.get(&p.name) {
                p.accumulate_grad(g);
            }
        });
    }
}

/// State threaded through one forward pass.
pub struct Forward<'t, T> {
    tape: &'t Tape<T>,
    track_grads: bool,
    training: bool,
    rng: RefCell<Option<SplitMix64>>,
    bindings: RefCell<Vec<(String, usize)>>,
}

impl<'t, T: Scalar> Forward<'t, T> {
    /// Evaluation: no gradients, no stochastic depth.
    pub fn inference(tape: &'t Tape<T>) -> Self {
        Self {
            tape,
            track_grads: false,
            training: false,
            rng: RefCell::new(None),
            bindings: RefCell::new(Vec::new()),
        }
    }

    /// Deterministic evaluation that still records gradients for every
    /// trainable parameter (used by gradient checks).
    pub fn with_grads(tape: &'t Tape<T>) -> Self {
        Self {
            track_grads: true,
            ..Self::inference(tape)
        }
    }

    /// Training: gradients on, stochastic depth drawn from `rng`.
    pub fn training(tape: &'t Tape<T>, rng: SplitMix64) -> Self {
        Self {
            track_grads: true,
            training: true,
            rng: RefCell::new(Some(rng)),
            ..Self::inference(tape)
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Put a parameter on the tape.
    pub fn bind(&self, p: &Param<T>) -> Var<'t, T> {
        let v = self.tape.leaf(p.value.clone(), self.track_grads && p.requires_grad);
        if v.requires_grad() {
            self.bindings.borrow_mut().push((p.name.clone(), v.id()));
        }
        v
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut SplitMix64) -> R) -> Option<R> {
        self.rng.borrow_mut().as_mut().map(f)
    }

    /// Gradients of every bound parameter keyed by name; a parameter bound
    /// more than once gets the sum.
    pub fn gradients(&self, mut grads: Gradients<T>) -> HashMap<String, Tensor<T>> {
        let mut out: HashMap<String, Tensor<T>> = HashMap::new();
        for (name, id) in self.bindings.borrow().iter() {
            let Some(g) = grads.take(*id) else { continue };
            match out.get_mut(name) {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    out.insert(name.clone(), g);
                }
            }
        }
        out
    }
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let b = xavier_bound(fan_in, fan_out);
        Self {
            weight: Param::new(format!("{name}.weight"), Tensor::uniform(&[fan_in, fan_out], -b, b, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(&ctx.bind(&self.weight), Some(&ctx.bind(&self.bias)))
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, c: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(&[c])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[c])),
        }
    }

    pub fn forward<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(&ctx.bind(&self.gamma), &ctx.bind(&self.beta), LN_EPS)
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvInit {
    Xavier,
    Zeros,
}

/// NCHW convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        init: ConvInit,
        rng: &mut SplitMix64,
    ) -> Self {
        let shape = [c_out, c_in / groups, kernel, kernel];
        let weight = match init {
            ConvInit::Xavier => {
                let taps = kernel * kernel;
                let b = xavier_bound(c_in / groups * taps, c_out / groups * taps);
                Tensor::uniform(&shape, -b, b, rng)
            }
            ConvInit::Zeros => Tensor::zeros(&shape),
        };
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            stride,
            pad,
            groups,
        }
    }

    pub fn forward<'t>(&self, ctx: &Forward<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(
            &ctx.bind(&self.weight),
            Some(&ctx.bind(&self.bias)),
            self.stride,
            self.pad,
            self.groups,
        )
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
