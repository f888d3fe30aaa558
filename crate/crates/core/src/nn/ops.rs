//! Differentiable layer kernels.
//!
//! Convolutions are lowered to GEMM via im2col; the transposed convolution is
//! the exact adjoint, reusing the same patch machinery through col2im. The
//! decoder's "nearest ×4 upsample, then k4/s2/p1 convolution" pair also has a
//! fused implementation ([`upconv4`]): on a ×4-replicated image every 4×4
//! window at stride 2 touches at most 2×2 distinct source pixels, so the pair
//! collapses to four phase-dependent 2×2 kernels — the same linear map at a
//! quarter of the multiplies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{matmul_abt, matmul_acc, matmul_atb};
use super::tensor::{Scalar, Tensor4};
use crate::error::{Error, Result};

/// Batch-norm variance floor and running-average weight. These follow the
/// common image-model convention (eps 1e-3, running = 0.99·running +
/// 0.01·batch): the larger eps tames channels whose batch variance
/// collapses, and the slow running average keeps eval-mode statistics
/// steady against batch-to-batch noise late in training.
pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if input + 2 * pad < k {
        return Err(Error::shape(
            "conv2d",
            format!("input + 2·pad >= kernel {k}"),
            format!("{input} + 2·{pad}"),
        ));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

/// Gather `(C·k·k) × (oh·ow)` patches of one `(C,H,W)` item; out-of-bounds
/// taps are zero (zero padding).
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    p: &mut [T],
) {
    let cols = oh * ow;
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(p.len(), c * k * k * cols);
    p.fill(T::zero());
    for ci in 0..c {
        for a in 0..k {
            let r_lo = if a >= pad { 0 } else { (pad - a).div_ceil(stride) };
            let r_hi = if h + pad <= a {
                0
            } else {
                ((h + pad - a - 1) / stride + 1).min(oh)
            };
            for b in 0..k {
                let row = &mut p[((ci * k + a) * k + b) * cols..][..cols];
                let c_lo = if b >= pad { 0 } else { (pad - b).div_ceil(stride) };
                let c_hi = if w + pad <= b {
                    0
                } else {
                    ((w + pad - b - 1) / stride + 1).min(ow)
                };
                for r_out in r_lo..r_hi {
                    let r_src = r_out * stride + a - pad;
                    let x_row = &x[(ci * h + r_src) * w..][..w];
                    let dst = &mut row[r_out * ow..][..ow];
                    for c_out in c_lo..c_hi {
                        dst[c_out] = x_row[c_out * stride + b - pad];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patches back onto the `(C,H,W)` item.
pub(crate) fn col2im_acc<T: Scalar>(
    p: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let cols = oh * ow;
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(p.len(), c * k * k * cols);
    for ci in 0..c {
        for a in 0..k {
            let r_lo = if a >= pad { 0 } else { (pad - a).div_ceil(stride) };
            let r_hi = if h + pad <= a {
                0
            } else {
                ((h + pad - a - 1) / stride + 1).min(oh)
            };
            for b in 0..k {
                let row = &p[((ci * k + a) * k + b) * cols..][..cols];
                let c_lo = if b >= pad { 0 } else { (pad - b).div_ceil(stride) };
                let c_hi = if w + pad <= b {
                    0
                } else {
                    ((w + pad - b - 1) / stride + 1).min(ow)
                };
                for r_out in r_lo..r_hi {
                    let r_src = r_out * stride + a - pad;
                    let x_row = &mut x[(ci * h + r_src) * w..][..w];
                    let src = &row[r_out * ow..][..ow];
                    for c_out in c_lo..c_hi {
                        let xi = c_out * stride + b - pad;
                        x_row[xi] = x_row[xi] + src[c_out];
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(y: &mut Tensor4<T>, bias: &[T]) {
    let hw = y.h * y.w;
    for n in 0..y.n {
        for co in 0..y.c {
            let base = (n * y.c + co) * hw;
            let b = bias[co];
            for v in &mut y.data[base..base + hw] {
                *v = *v + b;
            }
        }
    }
}

/// 2-D convolution; weight `(C_out, C_in, k, k)` stored as a [`Tensor4`].
pub fn conv2d<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let (c_out, c_in, k, k2) = weight.dims();
    if k != k2 {
        return Err(Error::shape("conv2d", "square kernel", format!("{k}x{k2}")));
    }
    if x.c != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("{c_in} input channels"),
            format!("{}", x.c),
        ));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape("conv2d bias", format!("{c_out}"), format!("{}", b.len())));
        }
    }
    let oh = conv_out_dim(x.h, k, stride, pad)?;
    let ow = conv_out_dim(x.w, k, stride, pad)?;
    let kk = c_in * k * k;
    let cols = oh * ow;
    let mut p = vec![T::zero(); kk * cols];
    let mut y = Tensor4::zeros(x.n, c_out, oh, ow);
    for n in 0..x.n {
        im2col(x.item(n), c_in, x.h, x.w, k, stride, pad, oh, ow, &mut p);
        matmul_acc(c_out, kk, cols, &weight.data, &p, y.item_mut(n));
    }
    if let Some(b) = bias {
        add_channel_bias(&mut y, b);
    }
    Ok(y)
}

/// Gradients of [`conv2d`] w.r.t. input, weight, and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>)> {
    let (c_out, c_in, k, _) = weight.dims();
    let (oh, ow) = (dy.h, dy.w);
    let kk = c_in * k * k;
    let cols = oh * ow;
    if dy.c != c_out || dy.n != x.n {
        return Err(Error::shape(
            "conv2d_backward",
            format!("dy ({}, {c_out}, ..)", x.n),
            format!("dy ({}, {}, ..)", dy.n, dy.c),
        ));
    }
    let mut p = vec![T::zero(); kk * cols];
    let mut dp = vec![T::zero(); kk * cols];
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut dw = Tensor4::zeros(c_out, c_in, k, k);
    let mut db = vec![T::zero(); c_out];
    for n in 0..x.n {
        let dy_n = dy.item(n);
        im2col(x.item(n), c_in, x.h, x.w, k, stride, pad, oh, ow, &mut p);
        matmul_abt(c_out, cols, kk, dy_n, &p, &mut dw.data);
        dp.fill(T::zero());
        matmul_atb(kk, c_out, cols, &weight.data, dy_n, &mut dp);
        col2im_acc(&dp, c_in, x.h, x.w, k, stride, pad, oh, ow, dx.item_mut(n));
        for co in 0..c_out {
            db[co] = db[co] + dy_n[co * cols..(co + 1) * cols].iter().copied().sum();
        }
    }
    Ok((dx, dw, db))
}

/// Transposed convolution (exact adjoint of [`conv2d`] as a linear map);
/// weight `(C_in, C_out, k, k)`. With k4/s2/p1 the spatial dims double.
pub fn transposed_conv2d<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let (c_in, c_out, k, _) = weight.dims();
    if x.c != c_in {
        return Err(Error::shape(
            "transposed_conv2d",
            format!("{c_in} input channels"),
            format!("{}", x.c),
        ));
    }
    let oh = (x.h - 1) * stride + k - 2 * pad;
    let ow = (x.w - 1) * stride + k - 2 * pad;
    let kk = c_out * k * k;
    let cols = x.h * x.w;
    let mut pbuf = vec![T::zero(); kk * cols];
    let mut y = Tensor4::zeros(x.n, c_out, oh, ow);
    for n in 0..x.n {
        pbuf.fill(T::zero());
        matmul_atb(kk, c_in, cols, &weight.data, x.item(n), &mut pbuf);
        col2im_acc(&pbuf, c_out, oh, ow, k, stride, pad, x.h, x.w, y.item_mut(n));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::shape(
                "transposed_conv2d bias",
                format!("{c_out}"),
                format!("{}", b.len()),
            ));
        }
        add_channel_bias(&mut y, b);
    }
    Ok(y)
}

/// Gradients of [`transposed_conv2d`].
pub fn transposed_conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>)> {
    let (c_in, c_out, k, _) = weight.dims();
    // The input gradient of an adjoint map is the forward map: a plain
    // convolution of dy with the same kernel memory read as (C_in, C_out·k²).
    let dx = conv2d(dy, weight, None, stride, pad)?;
    let kk = c_out * k * k;
    let cols = x.h * x.w;
    let mut pdy = vec![T::zero(); kk * cols];
    let mut dw = Tensor4::zeros(c_in, c_out, k, k);
    let mut db = vec![T::zero(); c_out];
    let ohw = dy.h * dy.w;
    for n in 0..x.n {
        im2col(dy.item(n), c_out, dy.h, dy.w, k, stride, pad, x.h, x.w, &mut pdy);
        matmul_abt(c_in, cols, kk, x.item(n), &pdy, &mut dw.data);
        for co in 0..c_out {
            db[co] = db[co]
                + dy.item(n)[co * ohw..(co + 1) * ohw].iter().copied().sum();
        }
    }
    Ok((dx, dw, db))
}

/// Nearest-neighbor upsampling: each pixel becomes a `factor×factor` block.
pub fn upsample_nearest<T: Scalar>(x: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    assert!(factor >= 1);
    let mut y = Tensor4::zeros(x.n, x.c, x.h * factor, x.w * factor);
    for n in 0..x.n {
        for c in 0..x.c {
            for r in 0..y.h {
                let src_row = &x.data[((n * x.c + c) * x.h + r / factor) * x.w..][..x.w];
                let dst = {
                    let base = ((n * y.c + c) * y.h + r) * y.w;
                    &mut y.data[base..base + y.w]
                };
                for col in 0..y.w {
                    dst[col] = src_row[col / factor];
                }
            }
        }
    }
    y
}

/// Adjoint of [`upsample_nearest`]: sum each `factor×factor` block.
pub fn upsample_nearest_backward<T: Scalar>(dy: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    let (h, w) = (dy.h / factor, dy.w / factor);
    let mut dx = Tensor4::zeros(dy.n, dy.c, h, w);
    for n in 0..dy.n {
        for c in 0..dy.c {
            for r in 0..dy.h {
                let src = &dy.data[((n * dy.c + c) * dy.h + r) * dy.w..][..dy.w];
                let dst =
                    &mut dx.data[((n * dx.c + c) * h + r / factor) * w..][..w];
                for col in 0..dy.w {
                    dst[col / factor] = dst[col / factor] + src[col];
                }
            }
        }
    }
    dx
}

/// Tap sets of the fused kernel: on the row axis, output parity `p` and
/// effective offset `d` collect original kernel rows `FOLD[p][d]`.
const FOLD: [[&[usize]; 2]; 2] = [[&[0], &[1, 2, 3]], [&[0, 1, 2], &[3]]];
/// Source-row offset of `d = 0` for each parity (even phases reach one row
/// up/left; odd phases start on the pixel itself).
const PHASE_OFF: [isize; 2] = [-1, 0];

/// Fold a `(C_out, C_in, 4, 4)` kernel into the four phase-dependent
/// `(C_out, C_in·2·2)` kernels of the fused upsample-conv.
fn fold_weights<T: Scalar>(weight: &Tensor4<T>) -> [Vec<T>; 4] {
    let (c_out, c_in, _, _) = weight.dims();
    let mut folded = [(); 4].map(|_| vec![T::zero(); c_out * c_in * 4]);
    for (phase, buf) in folded.iter_mut().enumerate() {
        let (pr, pc) = (phase / 2, phase % 2);
        for co in 0..c_out {
            for ci in 0..c_in {
                for dr in 0..2 {
                    for dc in 0..2 {
                        let mut s = T::zero();
                        for &a in FOLD[pr][dr] {
                            for &b in FOLD[pc][dc] {
                                s = s + weight.at(co, ci, a, b);
                            }
                        }
                        buf[((co * c_in + ci) * 2 + dr) * 2 + dc] = s;
                    }
                }
            }
        }
    }
    folded
}

/// Adjoint of [`fold_weights`]: spread phase-kernel gradients back onto the
/// 4×4 kernel entries they were summed from.
fn unfold_weight_grads<T: Scalar>(folded: &[Vec<T>; 4], c_out: usize, c_in: usize) -> Tensor4<T> {
    let mut dw = Tensor4::zeros(c_out, c_in, 4, 4);
    for (phase, buf) in folded.iter().enumerate() {
        let (pr, pc) = (phase / 2, phase % 2);
        for co in 0..c_out {
            for ci in 0..c_in {
                for dr in 0..2 {
                    for dc in 0..2 {
                        let g = buf[((co * c_in + ci) * 2 + dr) * 2 + dc];
                        for &a in FOLD[pr][dr] {
                            for &b in FOLD[pc][dc] {
                                let w = dw.at_mut(co, ci, a, b);
                                *w = *w + g;
                            }
                        }
                    }
                }
            }
        }
    }
    dw
}

/// Patches for one phase: `(C·4) × (h·w)` with 2×2 taps at `(t+off+dr,
/// u+off+dc)`, zero outside.
fn im2col_2x2<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    off_r: isize,
    off_c: isize,
    p: &mut [T],
) {
    let cols = h * w;
    p.fill(T::zero());
    for ci in 0..c {
        for dr in 0..2isize {
            let shift_r = off_r + dr;
            for dc in 0..2isize {
                let shift_c = off_c + dc;
                let row =
                    &mut p[((ci * 2 + dr as usize) * 2 + dc as usize) * cols..][..cols];
                let t_lo = (-shift_r).max(0) as usize;
                let t_hi = (h as isize - shift_r).min(h as isize).max(0) as usize;
                let u_lo = (-shift_c).max(0) as usize;
                let u_hi = (w as isize - shift_c).min(w as isize).max(0) as usize;
                for t in t_lo..t_hi {
                    let src = (t as isize + shift_r) as usize;
                    let x_row = &x[(ci * h + src) * w..][..w];
                    let dst = &mut row[t * w..][..w];
                    for u in u_lo..u_hi {
                        dst[u] = x_row[(u as isize + shift_c) as usize];
                    }
                }
            }
        }
    }
}

fn col2im_2x2_acc<T: Scalar>(
    p: &[T],
    c: usize,
    h: usize,
    w: usize,
    off_r: isize,
    off_c: isize,
    x: &mut [T],
) {
    let cols = h * w;
    for ci in 0..c {
        for dr in 0..2isize {
            let shift_r = off_r + dr;
            for dc in 0..2isize {
                let shift_c = off_c + dc;
                let row = &p[((ci * 2 + dr as usize) * 2 + dc as usize) * cols..][..cols];
                let t_lo = (-shift_r).max(0) as usize;
                let t_hi = (h as isize - shift_r).min(h as isize).max(0) as usize;
                let u_lo = (-shift_c).max(0) as usize;
                let u_hi = (w as isize - shift_c).min(w as isize).max(0) as usize;
                for t in t_lo..t_hi {
                    let src = (t as isize + shift_r) as usize;
                    let x_row = &mut x[(ci * h + src) * w..][..w];
                    let prow = &row[t * w..][..w];
                    for u in u_lo..u_hi {
                        let xi = (u as isize + shift_c) as usize;
                        x_row[xi] = x_row[xi] + prow[u];
                    }
                }
            }
        }
    }
}

/// Fused nearest-×4 upsample followed by a k4/s2/p1 convolution (no bias):
/// `(N, C_in, h, w) → (N, C_out, 2h, 2w)`, numerically equivalent to the
/// composed pair at a quarter of the multiplies.
pub fn upconv4<T: Scalar>(x: &Tensor4<T>, weight: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (c_out, c_in, k, k2) = weight.dims();
    if k != 4 || k2 != 4 {
        return Err(Error::shape("upconv4", "4x4 kernel", format!("{k}x{k2}")));
    }
    if x.c != c_in {
        return Err(Error::shape(
            "upconv4",
            format!("{c_in} input channels"),
            format!("{}", x.c),
        ));
    }
    let folded = fold_weights(weight);
    let (h, w) = (x.h, x.w);
    let cols = h * w;
    let kk = c_in * 4;
    let mut p = vec![T::zero(); kk * cols];
    let mut phase_out = vec![T::zero(); c_out * cols];
    let mut y = Tensor4::zeros(x.n, c_out, 2 * h, 2 * w);
    for n in 0..x.n {
        for phase in 0..4 {
            let (pr, pc) = (phase / 2, phase % 2);
            im2col_2x2(x.item(n), c_in, h, w, PHASE_OFF[pr], PHASE_OFF[pc], &mut p);
            phase_out.fill(T::zero());
            matmul_acc(c_out, kk, cols, &folded[phase], &p, &mut phase_out);
            let y_item = y.item_mut(n);
            for co in 0..c_out {
                for t in 0..h {
                    let src = &phase_out[co * cols + t * w..][..w];
                    let dst =
                        &mut y_item[(co * 2 * h + 2 * t + pr) * 2 * w..][..2 * w];
                    for u in 0..w {
                        dst[2 * u + pc] = src[u];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`upconv4`] w.r.t. input and weight.
pub fn upconv4_backward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (c_out, c_in, _, _) = weight.dims();
    let folded = fold_weights(weight);
    let mut dfolded = [(); 4].map(|_| vec![T::zero(); c_out * c_in * 4]);
    let (h, w) = (x.h, x.w);
    let cols = h * w;
    let kk = c_in * 4;
    let mut p = vec![T::zero(); kk * cols];
    let mut dp = vec![T::zero(); kk * cols];
    let mut dy_phase = vec![T::zero(); c_out * cols];
    let mut dx = Tensor4::zeros(x.n, x.c, h, w);
    for n in 0..x.n {
        for phase in 0..4 {
            let (pr, pc) = (phase / 2, phase % 2);
            let dy_item = dy.item(n);
            for co in 0..c_out {
                for t in 0..h {
                    let src = &dy_item[(co * 2 * h + 2 * t + pr) * 2 * w..][..2 * w];
                    let dst = &mut dy_phase[co * cols + t * w..][..w];
                    for u in 0..w {
                        dst[u] = src[2 * u + pc];
                    }
                }
            }
            im2col_2x2(x.item(n), c_in, h, w, PHASE_OFF[pr], PHASE_OFF[pc], &mut p);
            matmul_abt(c_out, cols, kk, &dy_phase, &p, &mut dfolded[phase]);
            dp.fill(T::zero());
            matmul_atb(kk, c_out, cols, &folded[phase], &dy_phase, &mut dp);
            col2im_2x2_acc(
                &dp,
                c_in,
                h,
                w,
                PHASE_OFF[pr],
                PHASE_OFF[pc],
                dx.item_mut(n),
            );
        }
    }
    Ok((dx, unfold_weight_grads(&dfolded, c_out, c_in)))
}

/// Multiply every channel of `x` by a single-channel coefficient map.
pub fn mul_channel_broadcast<T: Scalar>(
    x: &Tensor4<T>,
    alpha: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    if alpha.n != x.n || alpha.c != 1 || alpha.h != x.h || alpha.w != x.w {
        return Err(Error::shape(
            "mul_channel_broadcast",
            format!("({}, 1, {}, {})", x.n, x.h, x.w),
            format!("({}, {}, {}, {})", alpha.n, alpha.c, alpha.h, alpha.w),
        ));
    }
    let hw = x.h * x.w;
    let mut y = x.clone();
    for n in 0..x.n {
        let a = alpha.item(n);
        let yi = y.item_mut(n);
        for c in 0..x.c {
            for i in 0..hw {
                yi[c * hw + i] = yi[c * hw + i] * a[i];
            }
        }
    }
    Ok(y)
}

/// Gradients of [`mul_channel_broadcast`]: `dx = dy⊙α` and
/// `dα = Σ_channels dy⊙x`.
pub fn mul_channel_broadcast_backward<T: Scalar>(
    x: &Tensor4<T>,
    alpha: &Tensor4<T>,
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Tensor4<T>) {
    let hw = x.h * x.w;
    let mut dx = dy.clone();
    let mut dalpha = Tensor4::zeros(x.n, 1, x.h, x.w);
    for n in 0..x.n {
        let a = alpha.item(n);
        let xi = x.item(n);
        let dyi = dy.item(n);
        let dxi = dx.item_mut(n);
        let dai = dalpha.item_mut(n);
        for c in 0..x.c {
            for i in 0..hw {
                dxi[c * hw + i] = dxi[c * hw + i] * a[i];
                dai[i] = dai[i] + dyi[c * hw + i] * xi[c * hw + i];
            }
        }
    }
    (dx, dalpha)
}

/// Concatenate along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::shape(
            "concat_channels",
            format!("({}, _, {}, {})", a.n, a.h, a.w),
            format!("({}, _, {}, {})", b.n, b.h, b.w),
        ));
    }
    let mut y = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    let (alen, blen) = (a.c * a.h * a.w, b.c * b.h * b.w);
    for n in 0..a.n {
        y.item_mut(n)[..alen].copy_from_slice(a.item(n));
        y.item_mut(n)[alen..alen + blen].copy_from_slice(b.item(n));
    }
    Ok(y)
}

/// Split a channel-concat gradient back into the two inputs' gradients.
pub fn concat_channels_backward<T: Scalar>(
    dy: &Tensor4<T>,
    c_a: usize,
) -> (Tensor4<T>, Tensor4<T>) {
    let c_b = dy.c - c_a;
    let mut da = Tensor4::zeros(dy.n, c_a, dy.h, dy.w);
    let mut db = Tensor4::zeros(dy.n, c_b, dy.h, dy.w);
    let hw = dy.h * dy.w;
    for n in 0..dy.n {
        da.item_mut(n).copy_from_slice(&dy.item(n)[..c_a * hw]);
        db.item_mut(n).copy_from_slice(&dy.item(n)[c_a * hw..]);
    }
    (da, db)
}

/// Learned and running batch-norm state for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BnParams<T> {
    pub fn new(channels: usize) -> Self {
        BnParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }
}

/// Saved forward state for the train-mode backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub inv_std: Vec<T>,
    pub xhat: Tensor4<T>,
}

/// Train-mode batch norm: normalize per channel with batch statistics over
/// `(N, H, W)` and update running statistics in place.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor4<T>,
    params: &mut BnParams<T>,
    eps: f64,
    momentum: f64,
) -> Result<(Tensor4<T>, BnCache<T>)> {
    if x.n < 2 {
        return Err(Error::invalid(
            "batch_norm",
            "train mode needs batch size >= 2",
        ));
    }
    let c = x.c;
    let hw = x.h * x.w;
    let m = T::from_f64((x.n * hw) as f64);
    let mom = T::from_f64(momentum);
    let one_minus = T::from_f64(1.0 - momentum);
    let mut y = Tensor4::zeros(x.n, c, x.h, x.w);
    let mut xhat = Tensor4::zeros(x.n, c, x.h, x.w);
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        let mut sum_sq = T::zero();
        for n in 0..x.n {
            let base = (n * c + ch) * hw;
            for &v in &x.data[base..base + hw] {
                sum = sum + v;
                sum_sq = sum_sq + v * v;
            }
        }
        let mean = sum / m;
        let var = (sum_sq / m - mean * mean).max(T::zero());
        let istd = T::one() / (var + T::from_f64(eps)).sqrt();
        inv_std[ch] = istd;
        params.running_mean[ch] = mom * params.running_mean[ch] + one_minus * mean;
        params.running_var[ch] = mom * params.running_var[ch] + one_minus * var;
        let (g, b) = (params.gamma[ch], params.beta[ch]);
        for n in 0..x.n {
            let base = (n * c + ch) * hw;
            for i in base..base + hw {
                let xh = (x.data[i] - mean) * istd;
                xhat.data[i] = xh;
                y.data[i] = g * xh + b;
            }
        }
    }
    Ok((y, BnCache { inv_std, xhat }))
}

/// Train-mode batch-norm backward.
pub fn batch_norm_train_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let c = dy.c;
    let hw = dy.h * dy.w;
    let m = T::from_f64((dy.n * hw) as f64);
    let mut dx = Tensor4::zeros(dy.n, c, dy.h, dy.w);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for n in 0..dy.n {
            let base = (n * c + ch) * hw;
            for i in base..base + hw {
                sum_dy = sum_dy + dy.data[i];
                sum_dy_xhat = sum_dy_xhat + dy.data[i] * cache.xhat.data[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        let mean_dy = sum_dy / m;
        let mean_dy_xhat = sum_dy_xhat / m;
        for n in 0..dy.n {
            let base = (n * c + ch) * hw;
            for i in base..base + hw {
                dx.data[i] =
                    scale * (dy.data[i] - mean_dy - cache.xhat.data[i] * mean_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Eval-mode batch norm: normalize with the running statistics.
pub fn batch_norm_eval<T: Scalar>(x: &Tensor4<T>, params: &BnParams<T>, eps: f64) -> Tensor4<T> {
    let c = x.c;
    let hw = x.h * x.w;
    let mut y = Tensor4::zeros(x.n, c, x.h, x.w);
    for ch in 0..c {
        let istd = T::one() / (params.running_var[ch] + T::from_f64(eps)).sqrt();
        let (g, b) = (params.gamma[ch], params.beta[ch]);
        let mean = params.running_mean[ch];
        for n in 0..x.n {
            let base = (n * c + ch) * hw;
            for i in base..base + hw {
                y.data[i] = g * (x.data[i] - mean) * istd + b;
            }
        }
    }
    y
}

/// Eval-mode backward: running statistics are constants, so the input
/// gradient is a per-channel scale; γ/β gradients still flow.
pub fn batch_norm_eval_backward<T: Scalar>(
    x: &Tensor4<T>,
    params: &BnParams<T>,
    eps: f64,
    dy: &Tensor4<T>,
) -> (Tensor4<T>, Vec<T>, Vec<T>) {
    let c = x.c;
    let hw = x.h * x.w;
    let mut dx = Tensor4::zeros(x.n, c, x.h, x.w);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let istd = T::one() / (params.running_var[ch] + T::from_f64(eps)).sqrt();
        let mean = params.running_mean[ch];
        let scale = params.gamma[ch] * istd;
        for n in 0..x.n {
            let base = (n * c + ch) * hw;
            for i in base..base + hw {
                dx.data[i] = dy.data[i] * scale;
                dgamma[ch] = dgamma[ch] + dy.data[i] * (x.data[i] - mean) * istd;
                dbeta[ch] = dbeta[ch] + dy.data[i];
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Inverted dropout, train mode: zero with probability `rate`, scale
/// survivors by `1/(1−rate)` so the expectation is the identity. Eval mode is
/// the identity and has no kernel. Returns the mask for the backward pass.
pub fn dropout<T: Scalar>(
    x: &Tensor4<T>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor4<T>, Vec<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate {rate} outside [0, 1)"),
        ));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mut mask = Vec::with_capacity(x.numel());
    for _ in 0..x.numel() {
        let keep: f64 = rng.random();
        mask.push(if keep >= rate { scale } else { T::zero() });
    }
    let mut y = x.clone();
    for (v, m) in y.data.iter_mut().zip(&mask) {
        *v = *v * *m;
    }
    Ok((y, mask))
}

pub fn dropout_backward<T: Scalar>(mask: &[T], dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (v, m) in dx.data.iter_mut().zip(mask) {
        *v = *v * *m;
    }
    dx
}

pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: f64) -> Tensor4<T> {
    let a = T::from_f64(slope);
    x.map(|v| if v > T::zero() { v } else { a * v })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, slope: f64, dy: &Tensor4<T>) -> Tensor4<T> {
    let a = T::from_f64(slope);
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v <= T::zero() {
            *d = *d * a;
        }
    }
    dx
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Backward from the saved *output* `y = σ(x)`: `dx = dy · y·(1−y)`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&y.data) {
        *d = *d * v * (T::one() - v);
    }
    dx
}
