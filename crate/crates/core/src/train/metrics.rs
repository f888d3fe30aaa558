//! RMSE and the coefficient of determination over image datasets.
//!
//! Per-sample MSE is the pixel-mean squared error of one target image; RMSE
//! is the square root of the dataset mean of those values, so
//! `rmse² = mean(per_sample_mse)` holds by construction. R² compares
//! residuals against the dataset-mean target image ȳ.

use crate::error::{Error, Result};
use crate::nn::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub r2: f64,
    pub per_sample_mse: Vec<f64>,
}

/// Streaming accumulator so large datasets never need one giant tensor.
pub struct MetricsAccum {
    mean_target: Vec<f64>,
    ss_res: f64,
    ss_tot: f64,
    per_sample_mse: Vec<f64>,
}

impl MetricsAccum {
    /// `mean_target` is ȳ: the pixel-wise mean target image over the whole
    /// dataset (compute it with [`mean_image`]).
    pub fn new(mean_target: Vec<f64>) -> Self {
        MetricsAccum {
            mean_target,
            ss_res: 0.0,
            ss_tot: 0.0,
            per_sample_mse: Vec::new(),
        }
    }

    pub fn push(&mut self, pred: &[f32], target: &[f32]) -> Result<()> {
        if pred.len() != target.len() || pred.len() != self.mean_target.len() {
            return Err(Error::shape(
                "metrics",
                format!("{} pixels", self.mean_target.len()),
                format!("pred {}, target {}", pred.len(), target.len()),
            ));
        }
        let mut res = 0.0;
        let mut tot = 0.0;
        for i in 0..pred.len() {
            let d = pred[i] as f64 - target[i] as f64;
            res += d * d;
            let t = target[i] as f64 - self.mean_target[i];
            tot += t * t;
        }
        self.ss_res += res;
        self.ss_tot += tot;
        self.per_sample_mse.push(res / pred.len() as f64);
        Ok(())
    }

    pub fn finish(self) -> Result<MetricsReport> {
        let n = self.per_sample_mse.len();
        if n < 2 {
            return Err(Error::invalid(
                "metrics",
                format!("need at least 2 samples for r2, got {n}"),
            ));
        }
        if self.ss_tot == 0.0 {
            return Err(Error::invalid(
                "metrics",
                "target variance is zero, r2 is undefined",
            ));
        }
        let rmse = (self.per_sample_mse.iter().sum::<f64>() / n as f64).sqrt();
        Ok(MetricsReport {
            rmse,
            r2: 1.0 - self.ss_res / self.ss_tot,
            per_sample_mse: self.per_sample_mse,
        })
    }
}

/// Pixel-wise mean image over `images`, each of length `pixels`.
pub fn mean_image<'a>(images: impl Iterator<Item = &'a [f32]>, pixels: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; pixels];
    let mut count = 0usize;
    for img in images {
        for (a, &v) in acc.iter_mut().zip(img) {
            *a += v as f64;
        }
        count += 1;
    }
    if count > 0 {
        for a in &mut acc {
            *a /= count as f64;
        }
    }
    acc
}

/// Metrics over two aligned prediction/target batches (N, 1, H, W).
pub fn compute_metrics(preds: &Tensor4<f32>, targets: &Tensor4<f32>) -> Result<MetricsReport> {
    if preds.dims() != targets.dims() {
        return Err(Error::shape(
            "metrics",
            format!("{:?}", targets.dims()),
            format!("{:?}", preds.dims()),
        ));
    }
    let pixels = preds.c * preds.h * preds.w;
    let images = (0..targets.n).map(|i| &targets.data[i * pixels..(i + 1) * pixels]);
    let mut accum = MetricsAccum::new(mean_image(images, pixels));
    for i in 0..preds.n {
        accum.push(
            &preds.data[i * pixels..(i + 1) * pixels],
            &targets.data[i * pixels..(i + 1) * pixels],
        )?;
    }
    accum.finish()
}
