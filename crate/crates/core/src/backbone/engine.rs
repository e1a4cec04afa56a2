//! Batched NHWC kernels with hand-written backward passes.
//!
//! Convolution is im2col + GEMM (via `matrixmultiply`). All kernels are
//! generic over [`Real`] so the same code runs in `f32` for training and in
//! `f64` for finite-difference checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::Float;

use crate::tensor_ops::DilatedConvSpec;

pub trait Real: Float + Default + Debug + Send + Sync + AddAssign + MulAssign + Sum + 'static {
    /// `c (+)= op(a) · op(b)` with `op(a)` m×k and `op(b)` k×n, all row-major;
    /// a transposed operand is stored in its untransposed layout.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_transposed: bool,
        b: &[Self],
        b_transposed: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_transposed: bool,
                b: &[Self],
                b_transposed: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert_eq!(a.len(), m * k, "gemm: lhs size");
                assert_eq!(b.len(), k * n, "gemm: rhs size");
                assert_eq!(c.len(), m * n, "gemm: output size");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above pin every buffer to the extents the
                // strides address.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `n × h × w × c` activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![T::zero(); n * h * w * c],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, c: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * h * w * c, "batch data length");
        Self { n, h, w, c, data }
    }

    pub fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn image(&self, i: usize) -> &[T] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.image_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.n, self.h, self.w, self.c) == (other.n, other.h, other.w, other.c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "batch add shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn out_len(input: usize, kernel: usize, rate: usize, stride: usize, pad: usize) -> usize {
    let extent = (kernel - 1) * rate + 1;
    let padded = input + 2 * pad;
    assert!(padded >= extent, "input {input} too small for kernel extent {extent}");
    (padded - extent) / stride + 1
}

fn is_pointwise(g: &DilatedConvSpec) -> bool {
    g.kernel == [1, 1] && g.stride == [1, 1] && g.padding == [0, 0]
}

fn im2col<T: Real>(
    img: &[T],
    h: usize,
    w: usize,
    g: &DilatedConvSpec,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let cin = g.in_channels;
    let [kh, kw] = g.kernel;
    let row_len = kh * kw * cin;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * row_len..(oy * wo + ox + 1) * row_len];
            for a in 0..kh {
                let iy = (oy * g.stride[0] + a * g.rate[0]) as isize - g.padding[0] as isize;
                for b in 0..kw {
                    let ix = (ox * g.stride[1] + b * g.rate[1]) as isize - g.padding[1] as isize;
                    let dst = &mut row[(a * kw + b) * cin..(a * kw + b + 1) * cin];
                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                        let src = (iy as usize * w + ix as usize) * cin;
                        dst.copy_from_slice(&img[src..src + cin]);
                    } else {
                        dst.fill(T::zero());
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(
    cols: &[T],
    h: usize,
    w: usize,
    g: &DilatedConvSpec,
    ho: usize,
    wo: usize,
    img: &mut [T],
) {
    let cin = g.in_channels;
    let [kh, kw] = g.kernel;
    let row_len = kh * kw * cin;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * row_len..(oy * wo + ox + 1) * row_len];
            for a in 0..kh {
                let iy = (oy * g.stride[0] + a * g.rate[0]) as isize - g.padding[0] as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                for b in 0..kw {
                    let ix = (ox * g.stride[1] + b * g.rate[1]) as isize - g.padding[1] as isize;
                    if ix < 0 || ix as usize >= w {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * cin;
                    let src = &row[(a * kw + b) * cin..(a * kw + b + 1) * cin];
                    for (d, &s) in img[dst..dst + cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Dilated convolution. `weight` is `K_h × K_w × c_in × c_out`.
pub fn conv2d_forward<T: Real>(
    x: &Batch<T>,
    g: &DilatedConvSpec,
    weight: &[T],
    bias: Option<&[T]>,
) -> Batch<T> {
    assert_eq!(x.c, g.in_channels, "conv input channels");
    let ho = out_len(x.h, g.kernel[0], g.rate[0], g.stride[0], g.padding[0]);
    let wo = out_len(x.w, g.kernel[1], g.rate[1], g.stride[1], g.padding[1]);
    let k = g.kernel[0] * g.kernel[1] * g.in_channels;
    let cout = g.out_channels;
    assert_eq!(weight.len(), k * cout, "conv weight size");
    let mut out = Batch::zeros(x.n, ho, wo, cout);
    let mut cols = if is_pointwise(g) {
        Vec::new()
    } else {
        vec![T::zero(); ho * wo * k]
    };
    for i in 0..x.n {
        let img = x.image(i);
        let lhs: &[T] = if is_pointwise(g) {
            img
        } else {
            im2col(img, x.h, x.w, g, ho, wo, &mut cols);
            &cols
        };
        let dst = out.image_mut(i);
        T::gemm(ho * wo, k, cout, lhs, false, weight, false, dst, false);
        if let Some(b) = bias {
            for px in dst.chunks_exact_mut(cout) {
                for (v, &bv) in px.iter_mut().zip(b) {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Batch<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Batch<T>,
    g: &DilatedConvSpec,
    weight: &[T],
    grad_out: &Batch<T>,
    need_input_grad: bool,
) -> ConvGrads<T> {
    let (ho, wo, cout) = (grad_out.h, grad_out.w, grad_out.c);
    let k = g.kernel[0] * g.kernel[1] * g.in_channels;
    let pointwise = is_pointwise(g);
    let mut grad_w = vec![T::zero(); k * cout];
    let mut grad_b = vec![T::zero(); cout];
    let mut grad_x = need_input_grad.then(|| Batch::zeros(x.n, x.h, x.w, x.c));
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ho * wo * k] };
    let mut grad_cols = vec![T::zero(); ho * wo * k];
    for i in 0..x.n {
        let gout = grad_out.image(i);
        for px in gout.chunks_exact(cout) {
            for (gb, &v) in grad_b.iter_mut().zip(px) {
                *gb += v;
            }
        }
        let lhs: &[T] = if pointwise {
            x.image(i)
        } else {
            im2col(x.image(i), x.h, x.w, g, ho, wo, &mut cols);
            &cols
        };
        T::gemm(k, ho * wo, cout, lhs, true, gout, false, &mut grad_w, true);
        if let Some(gx) = grad_x.as_mut() {
            if pointwise {
                T::gemm(ho * wo, cout, k, gout, false, weight, true, gx.image_mut(i), false);
            } else {
                T::gemm(ho * wo, cout, k, gout, false, weight, true, &mut grad_cols, false);
                col2im(&grad_cols, x.h, x.w, g, ho, wo, gx.image_mut(i));
            }
        }
    }
    ConvGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_b,
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Saved state for the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    /// Whether statistics came from the batch (true) or were fixed.
    pub batch_stats: bool,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel affine normalisation. With `stats = None` the batch mean and
/// (biased) variance are used; otherwise the given running statistics.
pub fn batch_norm_forward<T: Real>(
    x: &Batch<T>,
    gamma: &[T],
    beta: &[T],
    stats: Option<(&[T], &[T])>,
) -> (Batch<T>, BnCache<T>) {
    let c = x.c;
    let count = x.n * x.h * x.w;
    let (mean, var) = match stats {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            let mut mean = vec![T::zero(); c];
            for px in x.data.chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(px) {
                    *m += v;
                }
            }
            let inv = T::one() / T::from_f64(count as f64);
            mean.iter_mut().for_each(|m| *m *= inv);
            let mut var = vec![T::zero(); c];
            for px in x.data.chunks_exact(c) {
                for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s *= inv);
            (mean, var)
        }
    };
    let eps = T::from_f64(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = x.data.clone();
    let mut out = x.clone();
    for (npx, opx) in normalized.chunks_exact_mut(c).zip(out.data.chunks_exact_mut(c)) {
        for ch in 0..c {
            let xh = (npx[ch] - mean[ch]) * inv_std[ch];
            npx[ch] = xh;
            opx[ch] = gamma[ch] * xh + beta[ch];
        }
    }
    (
        out,
        BnCache {
            normalized,
            inv_std,
            batch_stats: stats.is_none(),
            mean,
            var,
        },
    )
}

pub struct BnGrads<T> {
    pub input: Batch<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn batch_norm_backward<T: Real>(cache: &BnCache<T>, gamma: &[T], grad_out: &Batch<T>) -> BnGrads<T> {
    let c = grad_out.c;
    let count = T::from_f64((grad_out.n * grad_out.h * grad_out.w) as f64);
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    for (gpx, npx) in grad_out.data.chunks_exact(c).zip(cache.normalized.chunks_exact(c)) {
        for ch in 0..c {
            grad_gamma[ch] += gpx[ch] * npx[ch];
            grad_beta[ch] += gpx[ch];
        }
    }
    let mut input = grad_out.clone();
    for (ipx, npx) in input.data.chunks_exact_mut(c).zip(cache.normalized.chunks_exact(c)) {
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch];
            ipx[ch] = if cache.batch_stats {
                scale * (ipx[ch] - (grad_beta[ch] + npx[ch] * grad_gamma[ch]) / count)
            } else {
                scale * ipx[ch]
            };
        }
    }
    BnGrads {
        input,
        gamma: grad_gamma,
        beta: grad_beta,
    }
}

pub fn relu_forward<T: Real>(x: &mut Batch<T>) {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Masks `grad` in place using the post-activation output.
pub fn relu_backward<T: Real>(output: &Batch<T>, grad: &mut Batch<T>) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Max pooling with dilation; returns the winning flat input index per output
/// element (`usize::MAX` when the window is fully outside the input).
pub fn max_pool_forward<T: Real>(
    x: &Batch<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> (Batch<T>, Vec<usize>) {
    let ho = out_len(x.h, kernel, dilation, stride, padding);
    let wo = out_len(x.w, kernel, dilation, stride, padding);
    let c = x.c;
    let mut out = Batch::zeros(x.n, ho, wo, c);
    let mut argmax = vec![usize::MAX; out.data.len()];
    for i in 0..x.n {
        let base_in = i * x.image_len();
        for oy in 0..ho {
            for ox in 0..wo {
                let o = ((i * ho + oy) * wo + ox) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_ix = usize::MAX;
                    for a in 0..kernel {
                        let iy = (oy * stride + a * dilation) as isize - padding as isize;
                        if iy < 0 || iy as usize >= x.h {
                            continue;
                        }
                        for b in 0..kernel {
                            let ix = (ox * stride + b * dilation) as isize - padding as isize;
                            if ix < 0 || ix as usize >= x.w {
                                continue;
                            }
                            let flat = base_in + (iy as usize * x.w + ix as usize) * c + ch;
                            if x.data[flat] > best {
                                best = x.data[flat];
                                best_ix = flat;
                            }
                        }
                    }
                    if best_ix != usize::MAX {
                        out.data[o + ch] = best;
                        argmax[o + ch] = best_ix;
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub fn max_pool_backward<T: Real>(
    input_shape: (usize, usize, usize, usize),
    argmax: &[usize],
    grad_out: &Batch<T>,
) -> Batch<T> {
    let (n, h, w, c) = input_shape;
    let mut grad = Batch::zeros(n, h, w, c);
    for (&ix, &g) in argmax.iter().zip(&grad_out.data) {
        if ix != usize::MAX {
            grad.data[ix] += g;
        }
    }
    grad
}

/// Corner-aligned linear interpolation taps `(lower, upper, upper weight)`
/// using exact integer positions.
pub fn interpolation_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            if input <= 1 || output <= 1 {
                return (0, 0, 0.0);
            }
            let num = o * (input - 1);
            let den = output - 1;
            let lo = num / den;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, (num % den) as f64 / den as f64)
        })
        .collect()
}

pub fn upsample_forward<T: Real>(x: &Batch<T>, factor: usize) -> Batch<T> {
    if factor == 1 {
        return x.clone();
    }
    let (ho, wo, c) = (x.h * factor, x.w * factor, x.c);
    let rows = interpolation_taps(x.h, ho);
    let cols = interpolation_taps(x.w, wo);
    let mut out = Batch::zeros(x.n, ho, wo, c);
    for i in 0..x.n {
        let src = x.image(i);
        let dst = out.image_mut(i);
        for (oy, &(r0, r1, tr)) in rows.iter().enumerate() {
            let tr = T::from_f64(tr);
            for (ox, &(c0, c1, tc)) in cols.iter().enumerate() {
                let tc = T::from_f64(tc);
                let o = (oy * wo + ox) * c;
                let p = |r: usize, q: usize| (r * x.w + q) * c;
                for ch in 0..c {
                    let top = src[p(r0, c0) + ch] + (src[p(r0, c1) + ch] - src[p(r0, c0) + ch]) * tc;
                    let bot = src[p(r1, c0) + ch] + (src[p(r1, c1) + ch] - src[p(r1, c0) + ch]) * tc;
                    dst[o + ch] = top + (bot - top) * tr;
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample_forward`].
pub fn upsample_backward<T: Real>(grad_out: &Batch<T>, in_h: usize, in_w: usize) -> Batch<T> {
    let c = grad_out.c;
    if grad_out.h == in_h && grad_out.w == in_w {
        return grad_out.clone();
    }
    let rows = interpolation_taps(in_h, grad_out.h);
    let cols = interpolation_taps(in_w, grad_out.w);
    let mut grad = Batch::zeros(grad_out.n, in_h, in_w, c);
    for i in 0..grad_out.n {
        let src = grad_out.image(i);
        let dst = grad.image_mut(i);
        for (oy, &(r0, r1, tr)) in rows.iter().enumerate() {
            let tr = T::from_f64(tr);
            for (ox, &(c0, c1, tc)) in cols.iter().enumerate() {
                let tc = T::from_f64(tc);
                let o = (oy * grad_out.w + ox) * c;
                let p = |r: usize, q: usize| (r * in_w + q) * c;
                let w00 = (T::one() - tr) * (T::one() - tc);
                let w01 = (T::one() - tr) * tc;
                let w10 = tr * (T::one() - tc);
                let w11 = tr * tc;
                for ch in 0..c {
                    let g = src[o + ch];
                    dst[p(r0, c0) + ch] += g * w00;
                    dst[p(r0, c1) + ch] += g * w01;
                    dst[p(r1, c0) + ch] += g * w10;
                    dst[p(r1, c1) + ch] += g * w11;
                }
            }
        }
    }
    grad
}

/// Spatial mean per image and channel: `n × 1 × 1 × c`.
pub fn global_avg_pool<T: Real>(x: &Batch<T>) -> Batch<T> {
    let mut out = Batch::zeros(x.n, 1, 1, x.c);
    let inv = T::one() / T::from_f64((x.h * x.w) as f64);
    for i in 0..x.n {
        let dst = &mut out.data[i * x.c..(i + 1) * x.c];
        for px in x.image(i).chunks_exact(x.c) {
            for (d, &v) in dst.iter_mut().zip(px) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}
