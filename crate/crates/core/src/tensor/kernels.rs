//! Raw numeric kernels over contiguous buffers. Nothing here touches the tape.

use super::{broadcast_shapes, Scalar, Tensor};
use crate::error::{Error, Result};

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` viewed inside the broadcast shape `out` (0 on
/// broadcast axes, left-padded).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Visit every index of `shape` in row-major order, passing the flat output
/// index and the matching offsets for each operand stride set.
fn for_each_offset<const K: usize>(
    shape: &[usize],
    operand_strides: [&[usize]; K],
    mut f: impl FnMut(usize, [usize; K]),
) {
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut offs = [0usize; K];
    for flat in 0..n {
        f(flat, offs);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            for k in 0..K {
                offs[k] += operand_strides[k][d];
            }
            if idx[d] < shape[d] {
                break;
            }
            for k in 0..K {
                offs[k] -= operand_strides[k][d] * shape[d];
            }
            idx[d] = 0;
        }
    }
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

pub(crate) fn broadcast_binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        return Ok(a.zip_map(b, f));
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let (ad, bd) = (a.data(), b.data());
    if out_shape == a.shape() && is_suffix(a.shape(), b.shape()) {
        let nb = bd.len();
        let data = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        return Ok(Tensor::from_parts(out_shape, data));
    }
    if out_shape == b.shape() && is_suffix(b.shape(), a.shape()) {
        let na = ad.len();
        let data = bd.iter().enumerate().map(|(i, &y)| f(ad[i % na], y)).collect();
        return Ok(Tensor::from_parts(out_shape, data));
    }
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n: usize = out_shape.iter().product();
    let mut data = vec![T::ZERO; n];
    for_each_offset(&out_shape, [&sa, &sb], |flat, [oa, ob]| {
        data[flat] = f(ad[oa], bd[ob]);
    });
    Ok(Tensor::from_parts(out_shape, data))
}

/// Sum `g` down to `target`, reversing a broadcast.
pub(crate) fn sum_to_shape<T: Scalar>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let n: usize = target.iter().product();
    let mut out = vec![T::ZERO; n];
    if is_suffix(g.shape(), target) {
        for (i, &v) in g.data().iter().enumerate() {
            out[i % n] += v;
        }
    } else {
        let st = broadcast_strides(target, g.shape());
        let gd = g.data();
        for_each_offset(g.shape(), [&st], |flat, [o]| {
            out[o] += gd[flat];
        });
    }
    Tensor::from_parts(target.to_vec(), out)
}

/// Expand `t` to `shape` by broadcasting.
pub(crate) fn broadcast_to<T: Scalar>(t: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    match broadcast_shapes(t.shape(), shape) {
        Some(s) if s == shape => {}
        _ => {
            return Err(Error::Dimension {
                op: "expand",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            })
        }
    }
    let st = broadcast_strides(t.shape(), shape);
    let n: usize = shape.iter().product();
    let mut out = vec![T::ZERO; n];
    let td = t.data();
    for_each_offset(shape, [&st], |flat, [o]| out[flat] = td[o]);
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

pub(crate) fn permute<T: Scalar>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let rank = t.rank();
    let in_strides = strides(t.shape());
    let out_shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    let ps: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = t.numel();
    let src = t.data();
    let mut out = Vec::with_capacity(n);
    if rank > 0 && axes[rank - 1] == rank - 1 {
        // innermost axis stays contiguous: copy whole runs
        let run = out_shape[rank - 1];
        let outer = &out_shape[..rank - 1];
        for_each_offset(outer, [&ps[..rank - 1]], |_, [o]| {
            out.extend_from_slice(&src[o..o + run]);
        });
    } else {
        for_each_offset(&out_shape, [&ps], |_, [o]| out.push(src[o]));
    }
    Tensor::from_parts(out_shape, out)
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[k×n] += aᵀ · b with a[m×k], b[m×n]
fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        let brow = &b[r * n..(r + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += a · bᵀ with a[m×n], b[k×n]
fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::ZERO;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + j] += acc;
        }
    }
}

/// Resolved geometry of a (broadcast) batched matrix product.
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    /// (a offset, b offset, out offset) per batch entry, in units of matrices.
    pub batches: Vec<(usize, usize, usize)>,
    /// `b` is a plain matrix shared by every batch entry.
    pub shared_rhs: bool,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::Dimension {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let batch = broadcast_shapes(ba, bb).ok_or_else(mismatch)?;
        let mut out_shape = batch.clone();
        out_shape.extend([m, n]);
        let shared_rhs = bb.iter().all(|&d| d == 1);
        let sa = broadcast_strides(ba, &batch);
        let sb = broadcast_strides(bb, &batch);
        let so = strides(&batch);
        let mut batches = Vec::new();
        for_each_offset(&batch, [&sa, &sb, &so], |_, [oa, ob, oo]| batches.push((oa, ob, oo)));
        Ok(Self {
            m,
            k,
            n,
            out_shape,
            batches,
            shared_rhs,
        })
    }

    pub fn macs(&self) -> u64 {
        (self.batches.len() * self.m * self.k * self.n) as u64
    }
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let plan = MatmulPlan::new(a.shape(), b.shape())?;
    Ok(matmul_planned(&plan, a, b))
}

pub(crate) fn matmul_planned<T: Scalar>(plan: &MatmulPlan, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![T::ZERO; plan.out_shape.iter().product()];
    if plan.shared_rhs && plan.batches.len() * m == a.numel() / k {
        // a's batch axes are contiguous: one tall product
        gemm_nn(a.numel() / k, k, n, a.data(), b.data(), &mut out);
    } else {
        for &(oa, ob, oo) in &plan.batches {
            gemm_nn(
                m,
                k,
                n,
                &a.data()[oa * m * k..(oa + 1) * m * k],
                &b.data()[ob * k * n..(ob + 1) * k * n],
                &mut out[oo * m * n..(oo + 1) * m * n],
            );
        }
    }
    Tensor::from_parts(plan.out_shape.clone(), out)
}

/// Gradients of `a · b` given the upstream gradient `g`.
pub(crate) fn matmul_backward<T: Scalar>(
    plan: &MatmulPlan,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut ga = need_a.then(|| vec![T::ZERO; a.numel()]);
    let mut gb = need_b.then(|| vec![T::ZERO; b.numel()]);
    if plan.shared_rhs && plan.batches.len() * m == a.numel() / k {
        let rows = a.numel() / k;
        if let Some(ga) = ga.as_mut() {
            gemm_nt(rows, k, n, g.data(), b.data(), ga);
        }
        if let Some(gb) = gb.as_mut() {
            gemm_tn(rows, k, n, a.data(), g.data(), gb);
        }
    } else {
        for &(oa, ob, oo) in &plan.batches {
            let gs = &g.data()[oo * m * n..(oo + 1) * m * n];
            if let Some(ga) = ga.as_mut() {
                gemm_nt(m, k, n, gs, &b.data()[ob * k * n..(ob + 1) * k * n], &mut ga[oa * m * k..(oa + 1) * m * k]);
            }
            if let Some(gb) = gb.as_mut() {
                gemm_tn(m, k, n, &a.data()[oa * m * k..(oa + 1) * m * k], gs, &mut gb[ob * k * n..(ob + 1) * k * n]);
            }
        }
    }
    (
        ga.map(|d| Tensor::from_parts(a.shape().to_vec(), d)),
        gb.map(|d| Tensor::from_parts(b.shape().to_vec(), d)),
    )
}

pub(crate) fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("rank >= 1");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let mx = row.iter().fold(row[0], |m, &v| m.max(v));
        let mut total = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

pub(crate) fn softmax_last_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("rank >= 1");
    let mut out = vec![T::ZERO; y.numel()];
    for ((yr, gr), orow) in y.data().chunks(n).zip(g.data().chunks(n)).zip(out.chunks_mut(n)) {
        let dot = yr.iter().zip(gr).fold(T::ZERO, |acc, (&a, &b)| acc + a * b);
        for ((o, &yv), &gv) in orow.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

pub(crate) fn check_layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("layer norm eps must be positive, got {eps}")));
    }
    let c = *x.shape().last().unwrap_or(&0);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    Ok(())
}

/// Returns (output, normalized input, reciprocal std per row).
pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let c = *x.shape().last().expect("rank >= 1");
    let inv_c = T::from_f64(1.0 / c as f64);
    let eps = T::from_f64(eps);
    let rows = x.numel() / c;
    let mut xhat = vec![T::ZERO; x.numel()];
    let mut out = vec![T::ZERO; x.numel()];
    let mut rstd = Vec::with_capacity(rows);
    let (g, b) = (gamma.data(), beta.data());
    for (r, row) in x.data().chunks(c).enumerate() {
        let mean = row.iter().fold(T::ZERO, |a, &v| a + v) * inv_c;
        let var = row.iter().fold(T::ZERO, |a, &v| a + (v - mean) * (v - mean)) * inv_c;
        let rs = T::ONE / (var + eps).sqrt();
        rstd.push(rs);
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = g[j] * h + b[j];
        }
    }
    let shape = x.shape().to_vec();
    (Tensor::from_parts(shape.clone(), out), Tensor::from_parts(shape, xhat), rstd)
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward<T: Scalar>(
    xhat: &Tensor<T>,
    rstd: &[T],
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.numel();
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut dx = vec![T::ZERO; xhat.numel()];
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    let gm = gamma.data();
    for (r, (hrow, grow)) in xhat.data().chunks(c).zip(g.data().chunks(c)).enumerate() {
        let mut mean_d = T::ZERO;
        let mut mean_dh = T::ZERO;
        for j in 0..c {
            let d = grow[j] * gm[j];
            mean_d += d;
            mean_dh += d * hrow[j];
            dgamma[j] += grow[j] * hrow[j];
            dbeta[j] += grow[j];
        }
        mean_d *= inv_c;
        mean_dh *= inv_c;
        for j in 0..c {
            let d = grow[j] * gm[j];
            dx[r * c + j] = rstd[r] * (d - mean_d - hrow[j] * mean_dh);
        }
    }
    (
        Tensor::from_parts(xhat.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let cdf = T::from_f64(0.5) * (T::ONE + (x * T::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = T::from_f64(FRAC_1_SQRT_2PI) * (-(x * x) * T::from_f64(0.5)).exp();
    cdf + x * pdf
}

/// Output extent of a strided window: `floor((len + 2·pad − k)/stride) + 1`.
pub fn conv2d_output_extent(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < kernel {
        return None;
    }
    Some((len + 2 * pad - kernel) / stride + 1)
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(
        x: &[usize],
        w: &[usize],
        bias: Option<&[usize]>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let dim_err = || Error::Dimension {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        };
        if x.len() != 4 || w.len() != 4 {
            return Err(dim_err());
        }
        if groups == 0 || x[1] % groups != 0 || w[0] % groups != 0 {
            return Err(Error::Shape(format!(
                "conv2d: channels in={} out={} not divisible by groups={groups}",
                x[1], w[0]
            )));
        }
        if w[1] != x[1] / groups {
            return Err(dim_err());
        }
        if let Some(b) = bias {
            if b != [w[0]] {
                return Err(Error::Dimension {
                    op: "conv2d bias",
                    lhs: w.to_vec(),
                    rhs: b.to_vec(),
                });
            }
        }
        let extent = |len, k| {
            conv2d_output_extent(len, k, stride, pad).ok_or_else(|| {
                Error::Shape(format!(
                    "conv2d: kernel {k} with stride {stride}, pad {pad} does not fit input extent {len}"
                ))
            })
        };
        let oh = extent(x[2], w[2])?;
        let ow = extent(x[3], w[3])?;
        Ok(Self {
            batch: x[0],
            c_in: x[1],
            h: x[2],
            w: x[3],
            c_out: w[0],
            kh: w[2],
            kw: w[3],
            stride,
            pad,
            groups,
            oh,
            ow,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.c_out, self.oh, self.ow]
    }

    pub fn macs(&self) -> u64 {
        (self.batch * self.c_out * self.oh * self.ow * (self.c_in / self.groups) * self.kh * self.kw) as u64
    }

    /// Valid output index range along one axis for kernel tap `k`.
    fn valid_range(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        // o*s + k >= pad
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        // o*s + k - pad < in_len
        let hi = if in_len + self.pad > k {
            ((in_len + self.pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Visit every (input plane, output plane, weight index) triple and the
    /// matching contiguous row spans.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, usize)) {
        let cin_g = self.c_in / self.groups;
        let cout_g = self.c_out / self.groups;
        for n in 0..self.batch {
            for oc in 0..self.c_out {
                let g = oc / cout_g;
                let out_plane = n * self.c_out + oc;
                for icg in 0..cin_g {
                    let in_plane = n * self.c_in + g * cin_g + icg;
                    for ky in 0..self.kh {
                        let (oy0, oy1) = self.valid_range(ky, self.h, self.oh);
                        for kx in 0..self.kw {
                            let (ox0, ox1) = self.valid_range(kx, self.w, self.ow);
                            let widx = ((oc * cin_g + icg) * self.kh + ky) * self.kw + kx;
                            for oy in oy0..oy1 {
                                let iy = oy * self.stride + ky - self.pad;
                                f(in_plane, out_plane, widx, oy, iy, ox0, ox1, kx);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Tensor<T> {
    let plane_out = geom.oh * geom.ow;
    let plane_in = geom.h * geom.w;
    let mut out = vec![T::ZERO; geom.batch * geom.c_out * plane_out];
    if let Some(b) = bias {
        for (p, chunk) in out.chunks_mut(plane_out).enumerate() {
            chunk.fill(b.data()[p % geom.c_out]);
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let (s, pad, ow) = (geom.stride, geom.pad, geom.ow);
    geom.for_each_tap(|in_plane, out_plane, widx, oy, iy, ox0, ox1, kx| {
        let wv = wd[widx];
        let orow = &mut out[out_plane * plane_out + oy * ow..];
        let irow = &xd[in_plane * plane_in + iy * geom.w..];
        for ox in ox0..ox1 {
            orow[ox] += wv * irow[ox * s + kx - pad];
        }
    });
    Tensor::from_parts(geom.out_shape(), out)
}

/// Returns (dx, dw, dbias).
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    geom: &ConvGeometry,
    need_x: bool,
    need_w: bool,
    need_bias: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let plane_out = geom.oh * geom.ow;
    let plane_in = geom.h * geom.w;
    let (s, pad, ow) = (geom.stride, geom.pad, geom.ow);
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut dx = need_x.then(|| vec![T::ZERO; x.numel()]);
    let mut dw = need_w.then(|| vec![T::ZERO; w.numel()]);
    if need_x || need_w {
        geom.for_each_tap(|in_plane, out_plane, widx, oy, iy, ox0, ox1, kx| {
            let grow = &gd[out_plane * plane_out + oy * ow..];
            let ibase = in_plane * plane_in + iy * geom.w;
            if let Some(dx) = dx.as_mut() {
                let wv = wd[widx];
                let drow = &mut dx[ibase..];
                for ox in ox0..ox1 {
                    drow[ox * s + kx - pad] += wv * grow[ox];
                }
            }
            if let Some(dw) = dw.as_mut() {
                let irow = &xd[ibase..];
                let mut acc = T::ZERO;
                for ox in ox0..ox1 {
                    acc += irow[ox * s + kx - pad] * grow[ox];
                }
                dw[widx] += acc;
            }
        });
    }
    let db = need_bias.then(|| {
        let mut db = vec![T::ZERO; geom.c_out];
        for (p, chunk) in gd.chunks(plane_out).enumerate() {
            db[p % geom.c_out] += chunk.iter().fold(T::ZERO, |a, &v| a + v);
        }
        Tensor::from_parts(vec![geom.c_out], db)
    });
    (
        dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        db,
    )
}
