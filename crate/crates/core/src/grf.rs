//! Gaussian random conductivity fields.
//!
//! Continuous fields are synthesized by circulant embedding: the target
//! covariance — isotropic squared-exponential `exp(−r²/(2ℓ²))` with
//! correlation length `ℓ` in cells — is laid out on an enlarged torus,
//! diagonalized by a 2-D FFT, and used to filter complex white noise. The
//! real part of the filtered noise, restricted to the requested window, is a
//! stationary zero-mean unit-variance Gaussian field whose in-window
//! covariance equals the target exactly (up to the positive-semi-definiteness
//! of the embedding, which is checked at construction).
//!
//! Continuous fields are quantized into a finite conductivity alphabet at the
//! equal-probability quantiles of the standard normal, so each class covers
//! the same expected area fraction.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::{ConductivityField, GridSpec};

/// Default correlation length in cells.
pub const DEFAULT_CORRELATION_LENGTH: f64 = 8.0;

/// `k` conductivity classes evenly spaced over [0.1, 1].
pub fn class_values_linspace(k: usize) -> Vec<f64> {
    assert!(k >= 2, "need at least 2 classes");
    (0..k)
        .map(|i| 0.1 + 0.9 * i as f64 / (k - 1) as f64)
        .collect()
}

/// The default 5-class conductivity alphabet.
pub fn default_class_values() -> Vec<f64> {
    class_values_linspace(5)
}

/// Largest torus side the embedding may grow to. Correlation lengths that
/// would need more padding than this produce an indefinite embedding, which
/// is reported as a generation error rather than silently truncated.
const MAX_EMBED_SIDE: usize = 1024;
/// Eigenvalues more negative than `−REL_EIG_TOL · λ_max` mean the embedding
/// is not positive semi-definite; magnitudes below that are FFT roundoff and
/// are clamped to zero.
const REL_EIG_TOL: f64 = 1e-9;

/// Configuration for one conductivity-field distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfConfig {
    pub grid: GridSpec,
    /// Correlation length ℓ of the squared-exponential covariance, in cells.
    pub correlation_length: f64,
    /// Ascending, strictly positive conductivity class values.
    pub class_values: Vec<f64>,
    pub seed: u64,
}

impl GrfConfig {
    pub fn with_grid(grid: GridSpec) -> Self {
        GrfConfig {
            grid,
            correlation_length: DEFAULT_CORRELATION_LENGTH,
            class_values: default_class_values(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.correlation_length > 0.0) {
            return Err(Error::invalid(
                "grf config",
                format!("correlation length {} must be > 0", self.correlation_length),
            ));
        }
        validate_class_values(&self.class_values)
    }
}

impl Default for GrfConfig {
    fn default() -> Self {
        GrfConfig::with_grid(GridSpec::default())
    }
}

fn validate_class_values(class_values: &[f64]) -> Result<()> {
    if class_values.len() < 2 {
        return Err(Error::invalid(
            "class values",
            format!("need at least 2 classes, got {}", class_values.len()),
        ));
    }
    for (i, v) in class_values.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::invalid(
                "class values",
                format!("class {i} value {v} must be > 0"),
            ));
        }
        if i > 0 && !(class_values[i - 1] < *v) {
            return Err(Error::invalid(
                "class values",
                format!(
                    "classes must be strictly ascending: class {} = {} after {}",
                    i,
                    v,
                    class_values[i - 1]
                ),
            ));
        }
    }
    Ok(())
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Unnormalized in-place 2-D FFT (rows, then columns via transpose).
fn fft2_inplace(
    buf: &mut [Complex<f64>],
    rows: usize,
    cols: usize,
    row_fft: &dyn Fft<f64>,
    col_fft: &dyn Fft<f64>,
) {
    debug_assert_eq!(buf.len(), rows * cols);
    debug_assert_eq!(row_fft.len(), cols);
    debug_assert_eq!(col_fft.len(), rows);
    row_fft.process(buf);
    let mut t = vec![Complex::default(); buf.len()];
    transpose::transpose(buf, &mut t, cols, rows);
    col_fft.process(&mut t);
    transpose::transpose(&t, buf, rows, cols);
}

/// Reusable sampler: the embedding spectrum is computed once per
/// (grid, correlation length) and shared across seeds and threads.
pub struct GrfSampler {
    grid: GridSpec,
    /// Padded torus dimensions.
    mr: usize,
    mc: usize,
    /// √λ of the circulant embedding, row-major mr×mc.
    sqrt_lambda: Vec<f64>,
    row_ifft: Arc<dyn Fft<f64>>,
    col_ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GrfSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrfSampler")
            .field("grid", &self.grid)
            .field("embedding", &format_args!("{}x{}", self.mr, self.mc))
            .finish()
    }
}

impl GrfSampler {
    pub fn new(grid: GridSpec, correlation_length: f64) -> Result<Self> {
        if !(correlation_length > 0.0) {
            return Err(Error::invalid(
                "grf sampler",
                format!("correlation length {correlation_length} must be > 0"),
            ));
        }
        // Pad so (a) the in-window min-image distance is the true distance
        // (side ≥ 2·domain) and (b) the seam sits at least 6ℓ from the
        // origin, where the kernel's derivative kink is ≤ exp(−18); closer
        // seams leave the embedding measurably indefinite (seam at 4ℓ gives
        // min eigenvalue ≈ −2e-5 relative).
        let pad = (12.0 * correlation_length).ceil() as usize;
        let mr = next_pow2((2 * grid.height).max(grid.height + pad)).min(MAX_EMBED_SIDE);
        let mc = next_pow2((2 * grid.width).max(grid.width + pad)).min(MAX_EMBED_SIDE);

        // Torus covariance kernel under the minimum-image distance.
        let inv_two_l2 = 1.0 / (2.0 * correlation_length * correlation_length);
        let mut buf = vec![Complex::default(); mr * mc];
        for r in 0..mr {
            let dr = r.min(mr - r) as f64;
            for c in 0..mc {
                let dc = c.min(mc - c) as f64;
                buf[r * mc + c] = Complex::new((-(dr * dr + dc * dc) * inv_two_l2).exp(), 0.0);
            }
        }

        let mut planner = FftPlanner::<f64>::new();
        let row_fft = planner.plan_fft(mc, FftDirection::Forward);
        let col_fft = planner.plan_fft(mr, FftDirection::Forward);
        fft2_inplace(&mut buf, mr, mc, row_fft.as_ref(), col_fft.as_ref());

        let lambda_max = buf.iter().map(|z| z.re).fold(f64::MIN, f64::max);
        let lambda_min = buf.iter().map(|z| z.re).fold(f64::MAX, f64::min);
        if lambda_min < -REL_EIG_TOL * lambda_max {
            return Err(Error::FieldGeneration(format!(
                "covariance embedding is not positive semi-definite \
                 (min eigenvalue {lambda_min:.3e} vs max {lambda_max:.3e}): \
                 correlation length {correlation_length} is too large for a \
                 {mr}x{mc} embedding of a {}x{} grid",
                grid.height, grid.width
            )));
        }
        let sqrt_lambda = buf.iter().map(|z| z.re.max(0.0).sqrt()).collect();

        Ok(GrfSampler {
            grid,
            mr,
            mc,
            sqrt_lambda,
            row_ifft: planner.plan_fft(mc, FftDirection::Inverse),
            col_ifft: planner.plan_fft(mr, FftDirection::Inverse),
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Draw one continuous field (length `H·W`, row-major). Pure in `seed`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.mr * self.mc;
        let mut buf = Vec::with_capacity(n);
        for k in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            buf.push(Complex::new(a, b) * self.sqrt_lambda[k]);
        }
        fft2_inplace(
            &mut buf,
            self.mr,
            self.mc,
            self.row_ifft.as_ref(),
            self.col_ifft.as_ref(),
        );
        // Re and Im parts are two independent fields; we keep Re. The 1/√N
        // factor makes the unnormalized inverse FFT an orthogonal transform.
        let scale = 1.0 / (n as f64).sqrt();
        let mut field = Vec::with_capacity(self.grid.n_cells());
        for r in 0..self.grid.height {
            for c in 0..self.grid.width {
                field.push(buf[r * self.mc + c].re * scale);
            }
        }
        field
    }
}

/// One-shot convenience wrapper over [`GrfSampler`].
pub fn sample_continuous_grf(config: &GrfConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let sampler = GrfSampler::new(config.grid, config.correlation_length)?;
    Ok(sampler.sample(config.seed))
}

/// Map a continuous field to class values at the equal-probability quantiles
/// of the standard normal: `k` classes split at `Φ⁻¹(i/k)`, `i = 1..k−1`.
/// A value exactly on a threshold takes the lower class.
pub fn quantize_field(
    grid: GridSpec,
    field: &[f64],
    class_values: &[f64],
) -> Result<ConductivityField> {
    validate_class_values(class_values)?;
    if field.len() != grid.n_cells() {
        return Err(Error::shape(
            "quantize_field",
            format!("{} cells", grid.n_cells()),
            format!("{} values", field.len()),
        ));
    }
    let k = class_values.len();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let thresholds: Vec<f64> = (1..k)
        .map(|i| normal.inverse_cdf(i as f64 / k as f64))
        .collect();
    let values = field
        .iter()
        .map(|&v| {
            let class = thresholds.iter().take_while(|&&t| t < v).count();
            class_values[class]
        })
        .collect();
    ConductivityField::new(grid, values)
}
