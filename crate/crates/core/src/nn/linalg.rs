//! Register-tiled matrix kernels backing the convolution layers.
//!
//! Three product shapes cover every forward/backward path:
//! - [`matmul_acc`]:  C += A·B     (conv forward, transposed-conv input grad)
//! - [`matmul_atb`]:  C += Aᵀ·B    (transposed-conv forward, conv input grad)
//! - [`matmul_abt`]:  C += A·Bᵀ    (weight gradients)
//!
//! All operate on row-major flat slices and accumulate into `c`, so callers
//! zero the output when they need a plain product. Inner loops are written
//! over fixed-width register tiles that the compiler vectorizes for the
//! target CPU.

use super::tensor::Scalar;

/// Rows of A processed together.
const MR: usize = 4;

/// One `MR × W` register-tile update at output position `(i, j)`. `TRANS_A`
/// selects whether A is stored `(m × k)` or transposed `(k × m)`.
#[inline(always)]
fn strip<T: Scalar, const W: usize, const TRANS_A: bool>(
    i: usize,
    j: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    let mut acc = [[T::zero(); W]; MR];
    for (r, acc_r) in acc.iter_mut().enumerate() {
        acc_r.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + W]);
    }
    for kk in 0..k {
        let bv = &b[kk * n + j..kk * n + j + W];
        for (r, acc_r) in acc.iter_mut().enumerate() {
            let av = if TRANS_A {
                a[kk * m + i + r]
            } else {
                a[(i + r) * k + kk]
            };
            for l in 0..W {
                acc_r[l] = av.mul_add(bv[l], acc_r[l]);
            }
        }
    }
    for (r, acc_r) in acc.iter().enumerate() {
        c[(i + r) * n + j..(i + r) * n + j + W].copy_from_slice(acc_r);
    }
}

/// Row-tiled GEMM core shared by [`matmul_acc`] and [`matmul_atb`]. Column
/// strips narrow 32 → 16 → 8 so small output widths (bottleneck feature maps
/// are 4×4 = 16 columns) still accumulate in registers.
fn gemm_rows<T: Scalar, const TRANS_A: bool>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
) {
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + 32 <= n {
            strip::<T, 32, TRANS_A>(i, j, m, k, n, a, b, c);
            j += 32;
        }
        if j + 16 <= n {
            strip::<T, 16, TRANS_A>(i, j, m, k, n, a, b, c);
            j += 16;
        }
        if j + 8 <= n {
            strip::<T, 8, TRANS_A>(i, j, m, k, n, a, b, c);
            j += 8;
        }
        for r in 0..MR {
            for l in j..n {
                let mut s = c[(i + r) * n + l];
                for kk in 0..k {
                    let av = if TRANS_A {
                        a[kk * m + i + r]
                    } else {
                        a[(i + r) * k + kk]
                    };
                    s = av.mul_add(b[kk * n + l], s);
                }
                c[(i + r) * n + l] = s;
            }
        }
        i += MR;
    }
    for i in i..m {
        for kk in 0..k {
            let av = if TRANS_A { a[kk * m + i] } else { a[i * k + kk] };
            let bv = &b[kk * n..kk * n + n];
            let cv = &mut c[i * n..i * n + n];
            for l in 0..n {
                cv[l] = av.mul_add(bv[l], cv[l]);
            }
        }
    }
}

/// `c (m×n) += a (m×k) · b (k×n)`.
pub fn matmul_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_rows::<T, false>(m, k, n, a, b, c);
}

/// `c (m×n) += aᵀ·b` with `a (k×m)`, `b (k×n)`.
pub fn matmul_atb<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    gemm_rows::<T, true>(m, k, n, a, b, c);
}

/// `c (m×n) += a·bᵀ` with `a (m×l)`, `b (n×l)`: n·m dot products over
/// contiguous rows, accumulated in lane-parallel tiles.
pub fn matmul_abt<T: Scalar>(m: usize, l: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * l);
    debug_assert_eq!(b.len(), n * l);
    debug_assert_eq!(c.len(), m * n);

    const LANES: usize = 16;
    const JR: usize = 4;
    let chunks = l / LANES * LANES;

    for i in 0..m {
        let ar = &a[i * l..(i + 1) * l];
        let mut j = 0;
        while j + JR <= n {
            let mut lanes = [[T::zero(); LANES]; JR];
            for (s, lane) in lanes.iter_mut().enumerate() {
                let br = &b[(j + s) * l..(j + s) * l + chunks];
                for (ll, bv) in br.chunks_exact(LANES).enumerate() {
                    let av = &ar[ll * LANES..(ll + 1) * LANES];
                    for q in 0..LANES {
                        lane[q] = av[q].mul_add(bv[q], lane[q]);
                    }
                }
            }
            for (s, lane) in lanes.iter().enumerate() {
                let mut dot: T = lane.iter().copied().sum();
                let br = &b[(j + s) * l..(j + s + 1) * l];
                for q in chunks..l {
                    dot = ar[q].mul_add(br[q], dot);
                }
                c[i * n + j + s] = c[i * n + j + s] + dot;
            }
            j += JR;
        }
        for j in j..n {
            let br = &b[j * l..(j + 1) * l];
            let mut dot = T::zero();
            for q in 0..l {
                dot = ar[q].mul_add(br[q], dot);
            }
            c[i * n + j] = c[i * n + j] + dot;
        }
    }
}
