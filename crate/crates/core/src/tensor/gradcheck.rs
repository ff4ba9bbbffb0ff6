//! Central finite differences, the reference against which every backward
//! rule is checked. Double precision only.

use super::Tensor;
use crate::error::{Error, Result};

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element of `x`.
pub fn finite_diff_grad(f: impl Fn(&Tensor<f64>) -> f64, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("finite difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    Tensor::new(x.shape(), grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference norm when both
/// are (near) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error length");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.0, 7.0]).unwrap();
        let g = finite_diff_grad(|_| 42.0, &x, 1e-5).unwrap();
        assert!(g.max_abs() < 1e-9);
    }

    #[test]
    fn step_must_be_positive() {
        let x = Tensor::from_f64(&[1], &[0.0]).unwrap();
        assert!(finite_diff_grad(|_| 0.0, &x, 0.0).is_err());
    }
}
