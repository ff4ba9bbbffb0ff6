#![allow(dead_code)]

use sepvit::nn::{Module, Param};
use sepvit::{SplitMix64, Tensor};

/// Series expansion of erf, independent of libm.
pub fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf_series(x / 2f64.sqrt()))
}

/// Row-wise layer norm with eps 1e-5.
pub fn layer_norm(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
    row.iter()
        .enumerate()
        .map(|(j, v)| gamma[j] * (v - mean) / (var + 1e-5).sqrt() + beta[j])
        .collect()
}

/// `rows[r] · W + b` with `W: [in, out]` stored row-major.
pub fn linear(rows: &[Vec<f64>], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (fi, fo) = (w.shape()[0], w.shape()[1]);
    rows.iter()
        .map(|r| {
            (0..fo)
                .map(|o| b.data()[o] + (0..fi).map(|i| r[i] * w.data()[i * fo + o]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Overwrite every parameter (trainable or not) with uniform noise.
pub fn randomize<M: Module<f64>>(m: &mut M, seed: u64, scale: f64) {
    let mut rng = SplitMix64::new(seed);
    m.visit_mut(&mut |p: &mut Param<f64>| {
        p.value = Tensor::uniform(p.value.shape(), -scale, scale, &mut rng);
    });
}

pub fn zero_all<M: Module<f64>>(m: &mut M) {
    m.visit_mut(&mut |p: &mut Param<f64>| p.value = Tensor::zeros(p.value.shape()));
}

pub fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut SplitMix64::new(seed))
}
