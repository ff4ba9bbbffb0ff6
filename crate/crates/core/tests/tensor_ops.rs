//! Tensor primitives against independent loop-level and scalar oracles, and
//! every backward rule against central finite differences.

use sepvit::tensor::gradcheck::{finite_diff_grad, relative_error};
use sepvit::{SplitMix64, Tape, Tensor, Var};

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut SplitMix64::new(seed))
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<usize>, Vec<f64>) {
    let [b, _cin, h, wd] = x.shape().try_into().unwrap();
    let [cout, cin_g, kh, kw] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for oc in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                    for icg in 0..cin_g {
                        let ic = (oc / cout_g) * cin_g + icg;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(&[n, ic, iy as usize, ix as usize]) * w.at(&[oc, icg, ky, kx]);
                            }
                        }
                    }
                    out[((n * cout + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (vec![b, cout, oh, ow], out)
}

/// Series expansion of erf, independent of libm.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn matmul_small_cases() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::<f64>::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
    let b = tape.constant(Tensor::<f64>::from_f64(&[2, 2], &[3., 4., 5., 6.]).unwrap());
    assert_eq!(a.matmul(&b).unwrap().value().data(), &[3., 4., 5., 6.]);
    let a = tape.constant(Tensor::<f64>::from_f64(&[1, 2], &[1., 2.]).unwrap());
    let b = tape.constant(Tensor::<f64>::from_f64(&[2, 1], &[3., 4.]).unwrap());
    assert_eq!(a.matmul(&b).unwrap().value().data(), &[11.]);
}

#[test]
fn matmul_matches_triple_loop() {
    let a = rand(&[4, 5], 1);
    let b = rand(&[5, 6], 2);
    let c = a.matmul(&b).unwrap();
    let oracle = naive_matmul(a.data(), b.data(), 4, 5, 6);
    for (x, y) in c.data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn batched_matmul_broadcasts_leading_axes() {
    let a = rand(&[2, 3, 4, 5], 3);
    let b = rand(&[3, 5, 2], 4);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 3, 4, 2]);
    for i in 0..2 {
        for j in 0..3 {
            let asl = &a.data()[(i * 3 + j) * 20..(i * 3 + j + 1) * 20];
            let bsl = &b.data()[j * 10..(j + 1) * 10];
            let oracle = naive_matmul(asl, bsl, 4, 5, 2);
            let csl = &c.data()[(i * 3 + j) * 8..(i * 3 + j + 1) * 8];
            for (x, y) in csl.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn matmul_is_associative_at_tolerance() {
    for seed in 0..10 {
        let a = rand(&[4, 4], seed * 3);
        let b = rand(&[4, 4], seed * 3 + 1);
        let c = rand(&[4, 4], seed * 3 + 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let diff = left.zip_map(&right, |x, y| x - y).max_abs();
        assert!(diff < 1e-8);
    }
}

#[test]
fn softmax_cases() {
    let s = Tensor::<f64>::from_f64(&[3], &[0., 0., 0.]).unwrap().softmax_last().unwrap();
    for v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let s = Tensor::<f64>::from_f64(&[2], &[1000., 1000.]).unwrap().softmax_last().unwrap();
    assert_eq!(s.data(), &[0.5, 0.5]);
    let s = Tensor::<f64>::from_f64(&[3], &[1., 2., 3.]).unwrap().softmax_last().unwrap();
    let denom: f64 = [1.0f64, 2., 3.].iter().map(|v| (v - 3.0).exp()).sum();
    for (i, v) in s.data().iter().enumerate() {
        let oracle = ((i as f64 + 1.0) - 3.0).exp() / denom;
        assert!((v - oracle).abs() < 1e-12);
    }
    let bad = Tensor::<f64>::from_f64(&[2], &[f64::NAN, 0.0]).unwrap();
    assert!(matches!(bad.softmax_last(), Err(sepvit::Error::Numeric(_))));
}

#[test]
fn softmax_rows_are_distributions() {
    for seed in 0..10 {
        let x = Tensor::<f32>::uniform(&[5, 7], -20.0, 20.0, &mut SplitMix64::new(seed));
        let s = x.softmax_last().unwrap();
        for row in s.data().chunks(7) {
            let total: f32 = row.iter().sum();
            assert!((total - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn layer_norm_cases() {
    let one = |c: usize, v: f64| Tensor::<f64>::full(&[c], v);
    let y = Tensor::<f64>::from_f64(&[3], &[1., 1., 1.]).unwrap().layer_norm(&one(3, 1.0), &one(3, 0.0), 1e-5).unwrap();
    assert_eq!(y.data(), &[0., 0., 0.]);
    let y = Tensor::<f64>::from_f64(&[2], &[-1., 1.]).unwrap().layer_norm(&one(2, 1.0), &one(2, 0.0), 1e-12).unwrap();
    assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);

    let x = [1.0, 2.0, 3.0];
    let y = Tensor::<f64>::from_f64(&[3], &x).unwrap().layer_norm(&one(3, 2.0), &one(3, 1.0), 1e-5).unwrap();
    let mean = x.iter().sum::<f64>() / 3.0;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    for (i, v) in y.data().iter().enumerate() {
        let oracle = 2.0 * (x[i] - mean) / (var + 1e-5).sqrt() + 1.0;
        assert!((v - oracle).abs() < 1e-9);
    }
    assert!(matches!(
        Tensor::<f64>::from_f64(&[3], &x).unwrap().layer_norm(&one(3, 1.0), &one(3, 0.0), 0.0),
        Err(sepvit::Error::Parameter(_))
    ));
}

#[test]
fn gelu_cases() {
    let g = Tensor::<f64>::from_f64(&[3], &[0.0, 10.0, 1.0]).unwrap().gelu();
    assert_eq!(g.data()[0], 0.0);
    assert!((g.data()[1] - 10.0).abs() < 1e-6);
    let oracle = 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    assert!((g.data()[2] - oracle).abs() < 1e-9);
    assert!((oracle - 0.841_344_746_068_542_9).abs() < 1e-12);
}

#[test]
fn conv2d_cases() {
    let x = Tensor::<f64>::from_f64(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
    let w = Tensor::<f64>::ones(&[1, 1, 1, 1]);
    assert_eq!(x.conv2d(&w, None, 1, 0, 1).unwrap(), x);

    let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
    let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
    let y = x.conv2d(&w, None, 1, 1, 1).unwrap();
    assert_eq!(y.at(&[0, 0, 0, 0]), 4.0);
    assert_eq!(y.at(&[0, 0, 3, 3]), 4.0);
    assert_eq!(y.at(&[0, 0, 1, 1]), 9.0);
    assert_eq!(y.at(&[0, 0, 2, 1]), 9.0);
    assert_eq!(y.at(&[0, 0, 0, 1]), 6.0);

    let x = rand(&[2, 3, 8, 8], 11);
    let w = rand(&[4, 3, 3, 3], 12);
    let b = rand(&[4], 13);
    let y = x.conv2d(&w, Some(&b), 2, 1, 1).unwrap();
    let (shape, oracle) = naive_conv(&x, &w, Some(b.data()), 2, 1, 1);
    assert_eq!(y.shape(), &shape[..]);
    for (a, o) in y.data().iter().zip(&oracle) {
        assert!((a - o).abs() < 1e-10);
    }
}

#[test]
fn depthwise_conv_is_per_channel_correlation() {
    for seed in 0..5 {
        let x = rand(&[2, 4, 7, 7], 100 + seed);
        let w = rand(&[4, 1, 3, 3], 200 + seed);
        let y = x.conv2d(&w, None, 1, 1, 4).unwrap();
        let (_, oracle) = naive_conv(&x, &w, None, 1, 1, 4);
        for (a, o) in y.data().iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-10);
        }
    }
}

#[test]
fn conv2d_rejects_bad_geometry() {
    let x = Tensor::<f64>::ones(&[1, 3, 4, 4]);
    assert!(x.conv2d(&Tensor::ones(&[2, 3, 7, 7]), None, 1, 0, 1).is_err());
    assert!(x.conv2d(&Tensor::ones(&[3, 1, 3, 3]), None, 1, 1, 2).is_err());
}

#[test]
fn determinism_same_seed_same_bits() {
    let a: Tensor<f32> = Tensor::randn(&[16, 16], 1.0, &mut SplitMix64::new(77));
    let b: Tensor<f32> = Tensor::randn(&[16, 16], 1.0, &mut SplitMix64::new(77));
    assert_eq!(a, b);
}

/// Compare the tape gradient of `sum(op(x) ⊙ r)` for a random `r` against
/// finite differences on every input.
fn grad_check(
    inputs: &[Tensor<f64>],
    op: impl for<'t> Fn(&[Var<'t, f64>]) -> Var<'t, f64>,
    tol: f64,
    seed: u64,
) {
    let weights = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&vars).value();
        Tensor::uniform(out.shape(), -1.0, 1.0, &mut SplitMix64::new(seed ^ 0xabc))
    };
    let loss_of = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = op(&vars).value();
        out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let w = tape.constant(weights.clone());
    let loss = op(&vars).mul(&w).unwrap().sum();
    let grads = tape.backward(loss).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("input gradient");
        let numeric = finite_diff_grad(
            |t| {
                let mut xs = inputs.to_vec();
                xs[i] = t.clone();
                loss_of(&xs)
            },
            &inputs[i],
            1e-5,
        )
        .unwrap();
        let err = relative_error(analytic.data(), numeric.data());
        assert!(err < tol, "input {i}: relative error {err:e} (seed {seed})");
    }
}

const SEEDS: u64 = 10;

#[test]
fn grad_matmul() {
    for s in 0..SEEDS {
        grad_check(&[rand(&[3, 4], s), rand(&[4, 2], s + 50)], |v| v[0].matmul(&v[1]).unwrap(), 1e-6, s);
        grad_check(
            &[rand(&[2, 3, 4], s + 1), rand(&[2, 4, 3], s + 51)],
            |v| v[0].matmul(&v[1]).unwrap(),
            1e-6,
            s,
        );
        grad_check(
            &[rand(&[2, 1, 3, 4], s + 2), rand(&[3, 4, 2], s + 52)],
            |v| v[0].matmul(&v[1]).unwrap(),
            1e-6,
            s,
        );
    }
}

#[test]
fn grad_sum_of_matmul() {
    for s in 0..SEEDS {
        let a = rand(&[3, 4], s);
        let b = rand(&[4, 5], s + 7);
        let tape = Tape::new();
        let (va, vb) = (tape.var(a.clone()), tape.var(b.clone()));
        let g = tape.backward(va.matmul(&vb).unwrap().sum()).unwrap();
        let num = finite_diff_grad(|t| t.matmul(&b).unwrap().sum(), &a, 1e-5).unwrap();
        assert!(relative_error(g.get(va).unwrap().data(), num.data()) < 1e-6);
        let num = finite_diff_grad(|t| a.matmul(t).unwrap().sum(), &b, 1e-5).unwrap();
        assert!(relative_error(g.get(vb).unwrap().data(), num.data()) < 1e-6);
    }
}

#[test]
fn grad_elementwise() {
    for s in 0..SEEDS {
        grad_check(&[rand(&[2, 3, 4], s), rand(&[4], s + 9)], |v| v[0].add(&v[1]).unwrap(), 1e-6, s);
        grad_check(&[rand(&[2, 3, 4], s), rand(&[3, 1], s + 9)], |v| v[0].mul(&v[1]).unwrap(), 1e-6, s);
        grad_check(&[rand(&[2, 1, 4], s), rand(&[3, 4], s + 9)], |v| v[0].sub(&v[1]).unwrap(), 1e-6, s);
        grad_check(&[rand(&[5], s)], |v| v[0].scale(-2.5), 1e-6, s);
    }
}

#[test]
fn grad_shape_ops() {
    for s in 0..SEEDS {
        grad_check(&[rand(&[2, 3, 4], s)], |v| v[0].permute(&[2, 0, 1]).unwrap(), 1e-6, s);
        grad_check(&[rand(&[2, 3, 4], s)], |v| v[0].reshape(&[6, 4]).unwrap(), 1e-6, s);
        grad_check(&[rand(&[1, 3, 1], s)], |v| v[0].expand(&[2, 3, 4]).unwrap(), 1e-6, s);
        grad_check(&[rand(&[2, 5, 3], s)], |v| v[0].narrow(1, 1, 3).unwrap(), 1e-6, s);
        grad_check(
            &[rand(&[2, 2, 3], s), rand(&[2, 1, 3], s + 3)],
            |v| Var::concat(&[v[0], v[1]], 1).unwrap(),
            1e-6,
            s,
        );
        grad_check(&[rand(&[2, 5, 3], s)], |v| v[0].mean_axis(1).unwrap(), 1e-6, s);
    }
}

#[test]
fn grad_nonlinearities() {
    for s in 0..SEEDS {
        grad_check(&[rand(&[3, 6], s).map(|v| 3.0 * v)], |v| v[0].softmax_last().unwrap(), 1e-6, s);
        grad_check(&[rand(&[4, 5], s).map(|v| 3.0 * v)], |v| v[0].gelu(), 1e-6, s);
        grad_check(
            &[rand(&[3, 6], s), rand(&[6], s + 1), rand(&[6], s + 2)],
            |v| v[0].layer_norm(&v[1], &v[2], 1e-5).unwrap(),
            1e-6,
            s,
        );
    }
}

#[test]
fn grad_gelu_cross_check_at_half() {
    let x = Tensor::<f64>::from_f64(&[1], &[0.5]).unwrap();
    let tape = Tape::new();
    let v = tape.var(x.clone());
    let g = tape.backward(v.gelu().sum()).unwrap();
    let num = finite_diff_grad(|t| t.gelu().sum(), &x, 1e-5).unwrap();
    assert!((g.get(v).unwrap().data()[0] - num.data()[0]).abs() < 1e-6);
}

#[test]
fn grad_conv2d() {
    for s in 0..SEEDS {
        grad_check(
            &[rand(&[2, 2, 5, 5], s), rand(&[3, 2, 3, 3], s + 1), rand(&[3], s + 2)],
            |v| v[0].conv2d(&v[1], Some(&v[2]), 2, 1, 1).unwrap(),
            1e-6,
            s,
        );
        grad_check(
            &[rand(&[1, 4, 6, 6], s), rand(&[4, 1, 3, 3], s + 3)],
            |v| v[0].conv2d(&v[1], None, 1, 1, 4).unwrap(),
            1e-6,
            s,
        );
    }
}

#[test]
fn grad_cross_entropy() {
    for s in 0..SEEDS {
        let labels = [0usize, 2, 1];
        grad_check(&[rand(&[3, 4], s)], |v| v[0].cross_entropy(&labels).unwrap(), 1e-6, s);
    }
}
