//! Supervised training: MSE loss, Adam, the epoch loop with seeded
//! shuffling, loss history, and attention-map snapshots.

pub mod analysis;
pub mod metrics;
pub mod optim;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::grid::{IN_CHANNELS, OUT_CHANNELS};
use crate::model::{AttentionCapture, AttentionMaps, Model, Variant};
use crate::nn::{Scalar, Tensor4};
use optim::AdamState;

pub const DEFAULT_EPOCHS: usize = 130;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_LEARNING_RATE: f64 = 8e-4;
pub const DEFAULT_LR_HOLD_FRAC: f64 = 0.75;
pub const DEFAULT_SNAPSHOT_EPOCHS: [usize; 3] = [10, 40, 130];
/// How many validation samples get attention-map snapshots.
pub const N_PROBE_SAMPLES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Learning rate at the last epoch. `learning_rate` is the *starting*
    /// rate; after the hold phase the per-epoch rate follows a cosine curve
    /// down to this value.
    pub lr_final: f64,
    /// Fraction of the epochs spent at the starting rate before the cosine
    /// decay begins. 0 decays from the first epoch; 1 holds the starting
    /// rate throughout (constant-rate training).
    pub lr_hold_frac: f64,
    pub seed: u64,
    /// Epochs (1-based) at which attention maps are captured on the probe
    /// samples; entries beyond `epochs` are simply never reached.
    pub snapshot_epochs: Vec<usize>,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr_final: 0.0,
            lr_hold_frac: DEFAULT_LR_HOLD_FRAC,
            seed,
            snapshot_epochs: DEFAULT_SNAPSHOT_EPOCHS.to_vec(),
        }
    }

    /// Learning rate for a 1-based epoch: the starting rate for the first
    /// `lr_hold_frac` of the run, then cosine annealing down to `lr_final`
    /// at the last epoch. The hold phase keeps the fast early progress of a
    /// constant rate; the anneal shrinks the gradient-noise floor that a
    /// constant rate plateaus on.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let hold = (self.epochs as f64 * self.lr_hold_frac).floor() as usize;
        if self.epochs <= 1 || epoch <= hold {
            return self.learning_rate;
        }
        let span = self.epochs - hold;
        if span <= 1 {
            return self.lr_final;
        }
        let t = (epoch - hold - 1) as f64 / (span - 1) as f64;
        self.lr_final
            + 0.5 * (self.learning_rate - self.lr_final) * (1.0 + (std::f64::consts::PI * t).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("train config", "epochs must be >= 1"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid(
                "train config",
                format!("learning rate {} must be positive", self.learning_rate),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "train config",
                "batch size must be >= 2 (batch normalization needs batch statistics)",
            ));
        }
        if !self.lr_final.is_finite() || !(0.0..=self.learning_rate).contains(&self.lr_final) {
            return Err(Error::invalid(
                "train config",
                format!(
                    "final learning rate {} must lie in [0, {}]",
                    self.lr_final, self.learning_rate
                ),
            ));
        }
        if !self.lr_hold_frac.is_finite() || !(0.0..=1.0).contains(&self.lr_hold_frac) {
            return Err(Error::invalid(
                "train config",
                format!("hold fraction {} must lie in [0, 1]", self.lr_hold_frac),
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("train config", "betas must lie in [0, 1)"));
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::invalid("train config", "adam eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Attention maps for every probe sample at one snapshot epoch.
#[derive(Debug, Clone)]
pub struct AttentionSnapshot {
    pub epoch: usize,
    pub probes: Vec<AttentionMaps<f32>>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Entry 0 is the untrained baseline (eval-mode losses before any step).
    pub history: Vec<EpochRecord>,
    pub snapshots: Vec<AttentionSnapshot>,
}

/// History as CSV with a stable header.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{:.9e},{:.9e}\n", r.epoch, r.train_loss, r.val_loss));
    }
    out
}

/// Mean over the batch of per-image pixel-mean squared error.
pub fn mse_loss<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    check_pair(pred, target)?;
    let pixels = pred.c * pred.h * pred.w;
    let mut total = 0.0;
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        let d = Scalar::to_f64(p) - Scalar::to_f64(t);
        total += d * d;
    }
    Ok(total / (pred.n * pixels) as f64)
}

/// Loss plus its gradient with respect to the predictions:
/// `d loss / d pred = 2 (pred − target) / (N · pixels)`.
pub fn mse_loss_grad<T: Scalar>(
    pred: &Tensor4<T>,
    target: &Tensor4<T>,
) -> Result<(f64, Tensor4<T>)> {
    check_pair(pred, target)?;
    let pixels = pred.c * pred.h * pred.w;
    let scale = 2.0 / (pred.n * pixels) as f64;
    let mut grad = Tensor4::zeros(pred.n, pred.c, pred.h, pred.w);
    let mut total = 0.0;
    for i in 0..pred.data.len() {
        let d = Scalar::to_f64(pred.data[i]) - Scalar::to_f64(target.data[i]);
        total += d * d;
        grad.data[i] = T::from_f64(scale * d);
    }
    Ok((total / (pred.n * pixels) as f64, grad))
}

fn check_pair<T: Scalar>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::shape(
            "mse loss",
            format!("{:?}", target.dims()),
            format!("{:?}", pred.dims()),
        ));
    }
    Ok(())
}

/// Assemble `(input, target)` batch tensors for the given sample indices.
pub fn batch_from(data: &Dataset, indices: &[usize]) -> (Tensor4<f32>, Tensor4<f32>) {
    let grid = data.config.grid;
    let (h, w) = (grid.height, grid.width);
    let n = indices.len();
    let in_len = IN_CHANNELS * h * w;
    let out_len = OUT_CHANNELS * h * w;
    let mut x = Tensor4::zeros(n, IN_CHANNELS, h, w);
    let mut y = Tensor4::zeros(n, OUT_CHANNELS, h, w);
    for (row, &idx) in indices.iter().enumerate() {
        let s = &data.samples[idx];
        x.data[row * in_len..(row + 1) * in_len].copy_from_slice(&s.input);
        y.data[row * out_len..(row + 1) * out_len].copy_from_slice(&s.target);
    }
    (x, y)
}

/// Eval-mode mean loss over a whole dataset, batched.
pub fn evaluate_loss(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.samples.is_empty() {
        return Err(Error::invalid("evaluate", "dataset is empty"));
    }
    let indices: Vec<usize> = (0..data.samples.len()).collect();
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = batch_from(data, chunk);
        let pred = model.forward_eval(&x)?;
        // Per-image means accumulate exactly: weight each batch by its size.
        total += mse_loss(&pred, &y)? * chunk.len() as f64;
    }
    Ok(total / data.samples.len() as f64)
}

/// Full metrics (RMSE, R², per-sample MSE) of a model over a dataset.
pub fn evaluate_metrics(
    model: &Model<f32>,
    data: &Dataset,
    batch_size: usize,
) -> Result<metrics::MetricsReport> {
    let pixels = data.config.grid.n_cells();
    let mean = metrics::mean_image(data.samples.iter().map(|s| &s.target[..]), pixels);
    let mut accum = metrics::MetricsAccum::new(mean);
    let indices: Vec<usize> = (0..data.samples.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = batch_from(data, chunk);
        let pred = model.forward_eval(&x)?;
        for row in 0..chunk.len() {
            accum.push(
                &pred.data[row * pixels..(row + 1) * pixels],
                &y.data[row * pixels..(row + 1) * pixels],
            )?;
        }
    }
    accum.finish()
}

fn capture_snapshot(
    model: &Model<f32>,
    val: &Dataset,
    epoch: usize,
) -> Result<AttentionSnapshot> {
    let n_probes = N_PROBE_SAMPLES.min(val.samples.len());
    let mut probes = Vec::with_capacity(n_probes);
    for idx in 0..n_probes {
        let (x, _) = batch_from(val, &[idx]);
        let (_, capture, _) = model.forward_eval_full(&x, true, false)?;
        match capture {
            AttentionCapture::Maps(maps) => probes.push(maps),
            other => {
                return Err(Error::invalid(
                    "snapshot",
                    format!("expected attention maps, got {other:?}"),
                ))
            }
        }
    }
    Ok(AttentionSnapshot { epoch, probes })
}

/// Train `model` in place. Mini-batches are reshuffled every epoch with a
/// seeded generator; losses are recorded per epoch (entry 0 is the untrained
/// baseline); on the attention variant, gate maps for the first few
/// validation samples are captured at the configured snapshot epochs.
/// Everything downstream of the seed is deterministic and single-threaded.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.samples.is_empty() || val_set.samples.is_empty() {
        return Err(Error::invalid("train", "datasets must be non-empty"));
    }
    if train_set.samples.len() < 2 {
        return Err(Error::invalid(
            "train",
            "need at least 2 training samples for batch statistics",
        ));
    }
    let mut adam = AdamState::new(model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Independent stream so batch order and dropout masks decouple.
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);

    let mut history = Vec::with_capacity(config.epochs + 1);
    history.push(EpochRecord {
        epoch: 0,
        train_loss: evaluate_loss(model, train_set, config.batch_size)?,
        val_loss: evaluate_loss(model, val_set, config.batch_size)?,
    });
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = config.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                // A trailing singleton cannot provide batch statistics.
                continue;
            }
            let (x, y) = batch_from(train_set, chunk);
            let (pred, trace) = model.forward_train(&x, &mut dropout_rng)?;
            let (loss, dloss) = mse_loss_grad(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let mut grads = model.zeros_like();
            model.backward(&trace, &dloss, &mut grads)?;
            adam.step(model, &grads, lr, config).map_err(|e| match e {
                Error::Divergence(msg) => {
                    Error::Divergence(format!("{msg} at epoch {epoch}, batch {batch_idx}"))
                }
                other => other,
            })?;
            loss_sum += loss * chunk.len() as f64;
            n_seen += chunk.len();
        }
        let train_loss = loss_sum / n_seen as f64;
        let val_loss = evaluate_loss(model, val_set, config.batch_size)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if std::env::var_os("GW_TRAIN_LOG").is_some() {
            eprintln!(
                "epoch {epoch}/{}: train {train_loss:.4e}  val {val_loss:.4e}",
                config.epochs
            );
        }
        if model.config.variant == Variant::AttentionUNet
            && config.snapshot_epochs.contains(&epoch)
        {
            snapshots.push(capture_snapshot(model, val_set, epoch)?);
        }
    }
    Ok(TrainReport { history, snapshots })
}
