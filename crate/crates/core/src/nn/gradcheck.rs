//! Finite-difference gradient verification.
//!
//! All checks run in `f64` through the generic kernels: central differences
//! with step 1e-3 resolve roughly 1e-11 of relative error there, so a
//! correct analytic gradient shows discrepancies far below the acceptance
//! thresholds while sign, transposition, and indexing mistakes show up at
//! order one.

use super::tensor::Scalar;

/// Central-difference derivative of `f` w.r.t. `x[idx]`, restoring `x`.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &mut [f64],
    idx: usize,
    eps: f64,
) -> f64 {
    let orig = x[idx];
    x[idx] = orig + eps;
    let fp = f(x);
    x[idx] = orig - eps;
    let fm = f(x);
    x[idx] = orig;
    (fp - fm) / (2.0 * eps)
}

/// Largest relative discrepancy `|a − n| / (max(|a|, |n|) + 1e-10)` between
/// analytic and numeric derivatives at the probed indices.
pub fn max_rel_err<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    eps: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &i in indices {
        let numeric = central_diff(f, x, i, eps);
        let denom = analytic[i].abs().max(numeric.abs()) + 1e-10;
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Evenly spread probe indices covering both ends of a buffer.
pub fn probe_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|i| i * (len - 1) / (count - 1)).collect()
}

/// Weighted-sum loss `L = Σ r_i y_i` with fixed coefficients: linear in the
/// output, so `∂L/∂y = r` exactly and the op's backward is isolated.
pub fn weighted_loss<T: Scalar>(y: &[T], coeffs: &[f64]) -> f64 {
    y.iter()
        .zip(coeffs)
        .map(|(&v, r)| Scalar::to_f64(v) * r)
        .sum()
}
