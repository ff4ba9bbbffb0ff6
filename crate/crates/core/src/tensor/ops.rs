//! Differentiable operations on [`Var`]s. Each op computes its forward value
//! with the raw kernels and, when any input requires gradients, records a
//! backward rule on the tape.

use std::rc::Rc;

use super::kernels::{self, ConvGeometry, MatmulPlan};
use super::{macs, validate_permutation, Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands live on different tapes");
    }

    /// Record `value` with `parents`; the rule is attached only when some
    /// parent needs a gradient.
    fn record<F>(&self, value: Tensor<T>, parents: &[Var<'t, T>], rule: impl FnOnce() -> F) -> Var<'t, T>
    where
        F: Fn(&Tensor<T>) -> Vec<(usize, Tensor<T>)> + 'static,
    {
        let needs = parents.iter().any(|p| p.requires_grad());
        let backward = needs.then(|| Box::new(rule()) as super::tape::BackwardFn<T>);
        self.tape.push(Rc::new(value), needs, backward)
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        macs::record(plan.macs());
        let out = kernels::matmul_planned(&plan, &a, &b);
        let (ia, ib) = (self.id, other.id);
        let (na, nb) = (self.requires_grad(), other.requires_grad());
        Ok(self.record(out, &[*self, *other], move || {
            move |g: &Tensor<T>| {
                let (ga, gb) = kernels::matmul_backward(&plan, &a, &b, g, na, nb);
                ga.map(|t| (ia, t)).into_iter().chain(gb.map(|t| (ib, t))).collect()
            }
        }))
    }

    /// `x · weight + bias` over the last axis.
    pub fn linear(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    fn broadcast_op(
        &self,
        other: &Var<'t, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        grads: fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> (Tensor<T>, Tensor<T>),
    ) -> Result<Var<'t, T>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let out = kernels::broadcast_binary(name, &a, &b, f)?;
        let (ia, ib) = (self.id, other.id);
        Ok(self.record(out, &[*self, *other], move || {
            move |g: &Tensor<T>| {
                let (ga, gb) = grads(&a, &b, g);
                vec![
                    (ia, kernels::sum_to_shape(&ga, a.shape())),
                    (ib, kernels::sum_to_shape(&gb, b.shape())),
                ]
            }
        }))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_op(other, "add", |x, y| x + y, |_, _, g| (g.clone(), g.clone()))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_op(other, "sub", |x, y| x - y, |_, _, g| (g.clone(), g.map(|v| -v)))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_op(other, "mul", |x, y| x * y, |a, b, g| {
            let ga = kernels::broadcast_binary("mul", g, b, |x, y| x * y).expect("broadcast checked");
            let gb = kernels::broadcast_binary("mul", g, a, |x, y| x * y).expect("broadcast checked");
            (ga, gb)
        })
    }

    pub fn scale(&self, factor: f64) -> Var<'t, T> {
        let f = T::from_f64(factor);
        let out = self.value().map(|v| v * f);
        let ia = self.id;
        self.record(out, &[*self], move || move |g: &Tensor<T>| vec![(ia, g.map(|v| v * f))])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let out = a.reshape(shape)?;
        let (ia, orig) = (self.id, a.shape().to_vec());
        Ok(self.record(out, &[*self], move || {
            move |g: &Tensor<T>| vec![(ia, Tensor::from_parts(orig.clone(), g.data().to_vec()))]
        }))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        validate_permutation(axes, a.rank())?;
        let out = kernels::permute(&a, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        let ia = self.id;
        Ok(self.record(out, &[*self], move || {
            move |g: &Tensor<T>| vec![(ia, kernels::permute(g, &inverse))]
        }))
    }

    /// Broadcast to a larger shape.
    pub fn expand(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let a = self.value();
        let out = kernels::broadcast_to(&a, shape)?;
        let (ia, orig) = (self.id, a.shape().to_vec());
        Ok(self.record(out, &[*self], move || {
            move |g: &Tensor<T>| vec![(ia, kernels::sum_to_shape(g, &orig))]
        }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        check_axis(a.shape(), axis)?;
        if len == 0 || start + len > a.shape()[axis] {
            return Err(Error::Shape(format!(
                "narrow [{start}, {}) exceeds extent {} of axis {axis} in {:?}",
                start + len,
                a.shape()[axis],
                a.shape()
            )));
        }
        let (outer, extent, inner) = split_at_axis(a.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        let (ia, orig) = (self.id, a.shape().to_vec());
        Ok(self.record(Tensor::from_parts(shape, out), &[*self], move || {
            move |g: &Tensor<T>| {
                let mut full = vec![T::ZERO; orig.iter().product()];
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    full[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(ia, Tensor::from_parts(orig.clone(), full))]
            }
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        check_axis(&base, axis)?;
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p);
            let s = v.shape();
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        Ok(first.record(Tensor::from_parts(shape, out), parts, move || {
            move |g: &Tensor<T>| {
                let mut pieces: Vec<Vec<T>> = lens.iter().map(|l| Vec::with_capacity(outer * l * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (piece, &l) in pieces.iter_mut().zip(&lens) {
                        piece.extend_from_slice(&g.data()[off..off + l * inner]);
                        off += l * inner;
                    }
                }
                ids.iter()
                    .zip(pieces)
                    .zip(&shapes)
                    .map(|((&id, d), s)| (id, Tensor::from_parts(s.clone(), d)))
                    .collect()
            }
        }))
    }

    pub fn softmax_last(&self) -> Result<Var<'t, T>> {
        let out = self.value().softmax_last()?;
        let y = Rc::new(out.clone());
        let ia = self.id;
        Ok(self.record(out, &[*self], move || {
            move |g: &Tensor<T>| vec![(ia, kernels::softmax_last_backward(&y, g))]
        }))
    }

    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        self.same_tape(gamma);
        self.same_tape(beta);
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        kernels::check_layer_norm(&x, &gm, &bt, eps)?;
        let (out, xhat, rstd) = kernels::layer_norm_forward(&x, &gm, &bt, eps);
        let ids = (self.id, gamma.id, beta.id);
        Ok(self.record(out, &[*self, *gamma, *beta], move || {
            move |g: &Tensor<T>| {
                let (dx, dg, db) = kernels::layer_norm_backward(&xhat, &rstd, &gm, g);
                vec![(ids.0, dx), (ids.1, dg), (ids.2, db)]
            }
        }))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self) -> Var<'t, T> {
        let x = self.value();
        let out = x.gelu();
        let ia = self.id;
        self.record(out, &[*self], move || {
            move |g: &Tensor<T>| vec![(ia, x.zip_map(g, |xv, gv| kernels::gelu_grad_scalar(xv) * gv))]
        })
    }

    /// 2-D cross-correlation over NCHW input with weight
    /// `[c_out, c_in/groups, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(weight);
        let (x, w) = (self.value(), weight.value());
        let b = bias.map(|b| b.value());
        let geom = ConvGeometry::new(x.shape(), w.shape(), b.as_ref().map(|b| b.shape()), stride, pad, groups)?;
        macs::record(geom.macs());
        let out = kernels::conv2d_forward(&x, &w, b.as_deref(), &geom);
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        Ok(self.record(out, &parents, move || {
            move |g: &Tensor<T>| {
                let need_b = needs.get(2).copied().unwrap_or(false);
                let (dx, dw, db) = kernels::conv2d_backward(&x, &w, g, &geom, needs[0], needs[1], need_b);
                let mut grads = Vec::new();
                grads.extend(dx.map(|t| (ids[0], t)));
                grads.extend(dw.map(|t| (ids[1], t)));
                grads.extend(db.map(|t| (ids[2], t)));
                grads
            }
        }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Var<'t, T> {
        let a = self.value();
        let out = Tensor::scalar(a.sum());
        let (ia, shape) = (self.id, a.shape().to_vec());
        self.record(out, &[*self], move || {
            move |g: &Tensor<T>| vec![(ia, Tensor::full(&shape, g.data()[0]))]
        })
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let a = self.value();
        check_axis(a.shape(), axis)?;
        let (outer, len, inner) = split_at_axis(a.shape(), axis);
        let inv = T::from_f64(1.0 / len as f64);
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &a.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let (ia, orig) = (self.id, a.shape().to_vec());
        Ok(self.record(Tensor::from_parts(shape, out), &[*self], move || {
            move |g: &Tensor<T>| {
                let mut full = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        full.extend(src.iter().map(|&v| v * inv));
                    }
                }
                vec![(ia, Tensor::from_parts(orig.clone(), full))]
            }
        }))
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t, T>> {
        let logits = self.value();
        let [batch, classes] = logits.shape() else {
            return Err(Error::Shape(format!("cross_entropy expects [batch, classes], got {:?}", logits.shape())));
        };
        let (batch, classes) = (*batch, *classes);
        if labels.len() != batch || labels.iter().any(|&l| l >= classes) {
            return Err(Error::Shape(format!(
                "cross_entropy: {} labels in [0, {classes}) expected",
                batch
            )));
        }
        let probs = logits.softmax_last()?;
        let mut loss = 0.0;
        for (row, &l) in probs.data().chunks(classes).zip(labels) {
            loss -= row[l].to_f64().max(f64::MIN_POSITIVE).ln();
        }
        let loss = T::from_f64(loss / batch as f64);
        if !loss.is_finite() {
            return Err(Error::Numeric("cross entropy is not finite".into()));
        }
        let labels = labels.to_vec();
        let ia = self.id;
        Ok(self.record(Tensor::scalar(loss), &[*self], move || {
            move |g: &Tensor<T>| {
                let scale = g.data()[0] * T::from_f64(1.0 / batch as f64);
                let mut d = probs.data().to_vec();
                for (b, &l) in labels.iter().enumerate() {
                    d[b * classes + l] -= T::ONE;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                vec![(ia, Tensor::from_parts(vec![batch, classes], d))]
            }
        }))
    }
}
