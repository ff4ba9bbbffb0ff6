//! Mini-batch training with momentum, decoupled weight decay and a cosine
//! learning-rate schedule, plus top-1 evaluation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backbone::SepVit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Forward, Module};
use crate::tensor::{Scalar, SplitMix64, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Decoupled decay applied to weight matrices and kernels only.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "invalid optimiser settings: lr={}, momentum={}, weight_decay={}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total`: `lr·½(1 + cos(π·step/total))`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// SGD with momentum and decoupled weight decay.
pub struct Momentum<T> {
    momentum: f64,
    weight_decay: f64,
    velocity: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Momentum<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// `v ← μv + g; p ← p − lr·v − lr·λ·p`, the decay term only for
    /// rank ≥ 2 tensors. Frozen parameters are never touched.
    pub fn step<M: Module<T>>(&mut self, model: &mut M, lr: f64) {
        let mu = T::from_f64(self.momentum);
        let lr_t = T::from_f64(lr);
        let decay = T::from_f64(1.0 - lr * self.weight_decay);
        let velocity = &mut self.velocity;
        model.visit_mut(&mut |p| {
            if !p.requires_grad {
                return;
            }
            let Some(g) = p.grad.take() else { return };
            let v = velocity
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = mu * *vi + gi;
            }
            let decays = p.value.rank() >= 2;
            for (w, &vi) in p.value.data_mut().iter_mut().zip(v.data()) {
                if decays {
                    *w *= decay;
                }
                *w -= lr_t * vi;
            }
        });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    /// Mean mini-batch loss during the epoch.
    pub loss: f64,
    /// Top-1 accuracy of the end-of-epoch weights on the training set.
    pub train_accuracy: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,loss,train_accuracy";

impl EpochMetrics {
    pub fn csv_line(&self) -> String {
        format!("{},{:.8},{:.8},{:.6}", self.epoch, self.lr, self.loss, self.train_accuracy)
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

fn check_resolution<T: Scalar>(model: &SepVit<T>, data: &Dataset) -> Result<()> {
    let (r, c) = (model.config.input_resolution, model.config.in_channels);
    if data.meta.resolution != r || data.meta.channels != c {
        return Err(Error::Shape(format!(
            "dataset images are {}×{}×{} but model `{}` expects {c}×{r}×{r}",
            data.meta.channels, data.meta.resolution, data.meta.resolution, model.config.name
        )));
    }
    if data.meta.k > model.config.num_classes {
        return Err(Error::Shape(format!(
            "dataset has {} classes but the model predicts {}",
            data.meta.k, model.config.num_classes
        )));
    }
    Ok(())
}

/// Train in place; `on_epoch` sees each epoch's metrics as they are produced.
pub fn train<T: Scalar>(
    model: &mut SepVit<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_resolution(model, data)?;
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = SplitMix64::derive(cfg.seed, 1);
    let mut opt = Momentum::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let epoch_lr = cosine_lr(cfg.lr, step, total);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = data.batch::<T>(chunk);
            let lr = cosine_lr(cfg.lr, step, total);
            let grads = {
                let tape = Tape::new();
                let ctx = Forward::training(&tape, SplitMix64::derive(cfg.seed, 2 + step as u64));
                let diverged = |e: Error| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("training diverged at epoch {epoch}, step {step}: {msg}")),
                    other => other,
                };
                let logits = model.forward(&ctx, &tape.constant(images)).map_err(diverged)?;
                let loss = logits.cross_entropy(&labels).map_err(diverged)?;
                let value = loss.value().data()[0].to_f64();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss {value} at epoch {epoch}, step {step}")));
                }
                loss_sum += value;
                ctx.gradients(tape.backward(loss)?)
            };
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for {name} at epoch {epoch}, step {step}")));
            }
            model.zero_grad();
            model.accumulate_grads(&grads);
            opt.step(model, lr);
            step += 1;
        }
        let report = evaluate(model, data, cfg.batch_size).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("training diverged by the end of epoch {epoch}: {msg}")),
            other => other,
        })?;
        let m = EpochMetrics {
            epoch,
            lr: epoch_lr,
            loss: loss_sum / steps_per_epoch as f64,
            train_accuracy: report.accuracy,
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    /// Per-class rows: `class,support,correct,accuracy,pred_0,…,pred_{K-1}`.
    pub fn to_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("class,support,correct,accuracy");
        for j in 0..k {
            let _ = write!(s, ",pred_{j}");
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            let _ = write!(s, "{i},{support},{},{:.6}", row[i], self.per_class_accuracy[i]);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Top-1 accuracy, per-class accuracy and confusion counts.
pub fn evaluate<T: Scalar>(model: &SepVit<T>, data: &Dataset, batch_size: usize) -> Result<EvalReport> {
    check_resolution(model, data)?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let k = data.meta.k;
    let mut confusion = vec![vec![0u64; k]; k];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (images, labels) = data.batch::<T>(chunk);
        let logits = model.predict(&images)?;
        let classes = logits.shape()[1];
        for (row, &l) in logits.data().chunks(classes).zip(&labels) {
            // predictions restricted to the dataset's classes
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            confusion[l][best] += 1;
        }
    }
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let s: u64 = row.iter().sum();
            if s == 0 {
                0.0
            } else {
                row[i] as f64 / s as f64
            }
        })
        .collect();
    Ok(EvalReport {
        n: data.len(),
        correct: correct as usize,
        accuracy: correct as f64 / data.len() as f64,
        per_class_accuracy,
        confusion,
    })
}
