//! Post-training analyses: MC-dropout uncertainty, best/worst ranking,
//! out-of-distribution generalization, and the solver-vs-surrogate
//! wall-clock benchmark.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{generate_dataset, mix_seed, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::fdsolver;
use crate::grf::class_values_linspace;
use crate::grid::{GridSpec, Sample, CH_MASK};
use crate::model::Model;
use crate::nn::Tensor4;
use crate::train::{batch_from, evaluate_loss};

/// Per-pixel mean and standard deviation over repeated stochastic forward
/// passes. Dropout is active when `dropout_active` (batch normalization
/// stays in running-stats mode); disabling it degenerates every pass to the
/// same deterministic prediction, so the std map is exactly zero.
pub fn mc_dropout_predict(
    model: &Model<f32>,
    input: &Tensor4<f32>,
    passes: usize,
    seed: u64,
    dropout_active: bool,
) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    if passes < 2 {
        return Err(Error::invalid(
            "mc dropout",
            format!("need at least 2 passes, got {passes}"),
        ));
    }
    if dropout_active && model.config.dropout_rate == 0.0 {
        return Err(Error::invalid(
            "mc dropout",
            "model was configured without dropout; there is nothing to sample",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0f64; input.n * input.h * input.w * model.config.out_channels];
    let mut sum_sq = vec![0.0f64; sum.len()];
    let mut dims = (0, 0, 0, 0);
    for _ in 0..passes {
        let y = if dropout_active {
            model.forward_mc(input, &mut rng)?
        } else {
            model.forward_eval(input)?
        };
        dims = y.dims();
        for (i, &v) in y.data.iter().enumerate() {
            let v = v as f64;
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let inv = 1.0 / passes as f64;
    let (n, c, h, w) = dims;
    let mut mean = Tensor4::zeros(n, c, h, w);
    let mut std = Tensor4::zeros(n, c, h, w);
    for i in 0..sum.len() {
        let m = sum[i] * inv;
        mean.data[i] = m as f32;
        std.data[i] = (sum_sq[i] * inv - m * m).max(0.0).sqrt() as f32;
    }
    Ok((mean, std))
}

/// Median of the std map over cells within `radius` (Euclidean, in cells) of
/// any well versus the median over all other cells. Wells are the interior
/// fixed cells of the sample's mask channel.
pub fn well_distance_split(
    std_map: &[f32],
    sample: &Sample,
    radius: f64,
) -> Result<(f64, f64)> {
    let grid = sample.grid;
    let (hgt, wid) = (grid.height, grid.width);
    if std_map.len() != grid.n_cells() {
        return Err(Error::shape(
            "uncertainty split",
            format!("{} cells", grid.n_cells()),
            format!("{}", std_map.len()),
        ));
    }
    let mask = sample.channel(CH_MASK);
    let wells: Vec<(usize, usize)> = (0..hgt)
        .flat_map(|r| (0..wid).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let interior = r > 0 && c > 0 && r < hgt - 1 && c < wid - 1;
            interior && mask[grid.index(r, c)] > 0.5
        })
        .collect();
    if wells.is_empty() {
        return Err(Error::invalid("uncertainty split", "sample has no wells"));
    }
    let r2 = radius * radius;
    let mut near = Vec::new();
    let mut far = Vec::new();
    for r in 0..hgt {
        for c in 0..wid {
            let close = wells.iter().any(|&(wr, wc)| {
                let dr = r as f64 - wr as f64;
                let dc = c as f64 - wc as f64;
                dr * dr + dc * dc <= r2
            });
            let v = std_map[grid.index(r, c)];
            if close {
                near.push(v);
            } else {
                far.push(v);
            }
        }
    }
    if far.is_empty() {
        return Err(Error::invalid(
            "uncertainty split",
            "every cell is within the well radius",
        ));
    }
    Ok((median(&mut near), median(&mut far)))
}

fn median(values: &mut [f32]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedSample {
    pub index: usize,
    pub mse: f64,
}

/// Per-sample eval-mode MSE over a seeded random subset; returns the `k`
/// best (lowest) and `k` worst (highest) with deterministic index tiebreaks.
pub fn rank_predictions(
    model: &Model<f32>,
    data: &Dataset,
    subset_size: usize,
    k: usize,
    seed: u64,
    batch_size: usize,
) -> Result<(Vec<RankedSample>, Vec<RankedSample>)> {
    let n = data.samples.len();
    if subset_size == 0 || subset_size > n {
        return Err(Error::invalid(
            "ranking",
            format!("subset size {subset_size} outside 1..={n}"),
        ));
    }
    if k > subset_size {
        return Err(Error::invalid(
            "ranking",
            format!("k {k} exceeds subset size {subset_size}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subset: Vec<usize> = rand::seq::index::sample(&mut rng, n, subset_size).into_vec();
    subset.sort_unstable();

    let pixels = data.config.grid.n_cells();
    let mut ranked = Vec::with_capacity(subset_size);
    for chunk in subset.chunks(batch_size.max(1)) {
        let (x, y) = batch_from(data, chunk);
        let pred = model.forward_eval(&x)?;
        for (row, &idx) in chunk.iter().enumerate() {
            let mut err = 0.0;
            for i in 0..pixels {
                let d = pred.data[row * pixels + i] as f64 - y.data[row * pixels + i] as f64;
                err += d * d;
            }
            ranked.push(RankedSample {
                index: idx,
                mse: err / pixels as f64,
            });
        }
    }
    let mut best = ranked.clone();
    best.sort_by(|a, b| {
        a.mse
            .partial_cmp(&b.mse)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    let mut worst = ranked;
    worst.sort_by(|a, b| {
        b.mse
            .partial_cmp(&a.mse)
            .unwrap()
            .then(a.index.cmp(&b.index))
    });
    best.truncate(k);
    worst.truncate(k);
    Ok((best, worst))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub name: String,
    pub n_samples: usize,
    pub mean_mse: f64,
}

/// Evaluate the model on its own distribution plus four shifted ones:
/// 3-class and 10-class conductivity alphabets, and exactly 3 or 10 wells.
/// Each set is regenerated deterministically from the base seed.
pub fn generalization_suite(
    model: &Model<f32>,
    base: &DatasetConfig,
    n_per_set: usize,
    batch_size: usize,
) -> Result<Vec<DistributionReport>> {
    if n_per_set == 0 {
        return Err(Error::invalid("generalization", "n_per_set must be >= 1"));
    }
    let mut rows = Vec::new();
    let variants: [(&str, Box<dyn Fn(&mut DatasetConfig)>); 5] = [
        ("in-distribution", Box::new(|_| {})),
        (
            "conductivity-3-classes",
            Box::new(|c| c.class_values = class_values_linspace(3)),
        ),
        (
            "conductivity-10-classes",
            Box::new(|c| c.class_values = class_values_linspace(10)),
        ),
        ("wells-3", Box::new(|c| c.well_count_range = (3, 3))),
        ("wells-10", Box::new(|c| c.well_count_range = (10, 10))),
    ];
    for (i, (name, adjust)) in variants.iter().enumerate() {
        let mut config = base.clone();
        config.n_samples = n_per_set;
        // Fresh, distribution-specific seed so no set replays training data.
        config.seed = mix_seed(base.seed, 0xa11a + i as u64);
        adjust(&mut config);
        let set = generate_dataset(&config)?;
        let mean_mse = evaluate_loss(model, &set, batch_size)?;
        rows.push(DistributionReport {
            name: name.to_string(),
            n_samples: set.samples.len(),
            mean_mse,
        });
    }
    Ok(rows)
}

/// The generalization comparison as an aligned text table.
pub fn generalization_table(rows: &[DistributionReport]) -> String {
    let mut out = String::from(format!(
        "{:<24} {:>8} {:>14}\n",
        "distribution", "samples", "mean_mse"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:>8} {:>14.6e}\n",
            r.name, r.n_samples, r.mean_mse
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub n_scenarios: usize,
    pub runs: usize,
    pub warmup: usize,
    /// Mean/std of wall-clock seconds per finite-difference solve.
    pub fd_mean_s: f64,
    pub fd_std_s: f64,
    /// Mean/std of wall-clock seconds per surrogate inference (batched).
    pub surrogate_mean_s: f64,
    pub surrogate_std_s: f64,
    pub speedup: f64,
}

/// Time the finite-difference pipeline against batched surrogate inference
/// on identical scenarios. The first `warmup` rounds of each pipeline are
/// discarded; means and standard deviations are over the remaining `runs`.
pub fn benchmark_wallclock(
    model: &Model<f32>,
    config: &DatasetConfig,
    n_scenarios: usize,
    runs: usize,
    warmup: usize,
) -> Result<BenchmarkReport> {
    if runs < 2 {
        return Err(Error::invalid("benchmark", "need at least 2 timed runs"));
    }
    if warmup < 1 {
        return Err(Error::invalid("benchmark", "need at least 1 warmup run"));
    }
    if n_scenarios == 0 {
        return Err(Error::invalid("benchmark", "need at least 1 scenario"));
    }
    let mut config = config.clone();
    config.n_samples = n_scenarios;
    let data = generate_dataset(&config)?;

    // Reconstruct the solver-side inputs (conductivity + scenario) exactly
    // as generation drew them, so both pipelines face identical problems.
    let solver_inputs: Vec<_> = (0..n_scenarios)
        .map(|i| crate::datagen::regenerate_problem(&config, i))
        .collect::<Result<Vec<_>>>()?;

    let (x, _) = batch_from(&data, &(0..n_scenarios).collect::<Vec<_>>());

    let mut fd_times = Vec::with_capacity(runs);
    for round in 0..warmup + runs {
        let start = Instant::now();
        for (k, scenario) in &solver_inputs {
            let head = fdsolver::solve_steady_state(k, scenario, config.solver_tol)?;
            std::hint::black_box(&head);
        }
        let elapsed = start.elapsed().as_secs_f64();
        if round >= warmup {
            fd_times.push(elapsed / n_scenarios as f64);
        }
    }

    let mut sur_times = Vec::with_capacity(runs);
    for round in 0..warmup + runs {
        let start = Instant::now();
        let y = model.forward_eval(&x)?;
        std::hint::black_box(&y);
        let elapsed = start.elapsed().as_secs_f64();
        if round >= warmup {
            sur_times.push(elapsed / n_scenarios as f64);
        }
    }

    let (fd_mean_s, fd_std_s) = mean_std(&fd_times);
    let (surrogate_mean_s, surrogate_std_s) = mean_std(&sur_times);
    Ok(BenchmarkReport {
        n_scenarios,
        runs,
        warmup,
        fd_mean_s,
        fd_std_s,
        surrogate_mean_s,
        surrogate_std_s,
        speedup: fd_mean_s / surrogate_mean_s,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The timing comparison as a two-row text table plus the speedup line.
pub fn benchmark_table(report: &BenchmarkReport) -> String {
    format!(
        "{:<20} {:>14} {:>14}\n{:<20} {:>14.6e} {:>14.6e}\n{:<20} {:>14.6e} {:>14.6e}\nspeedup: {:.2}x (FD / surrogate, {} runs, {} warmup, {} scenarios)\n",
        "method",
        "mean_s/sample",
        "std_s",
        "finite-difference",
        report.fd_mean_s,
        report.fd_std_s,
        "surrogate",
        report.surrogate_mean_s,
        report.surrogate_std_s,
        report.speedup,
        report.runs,
        report.warmup,
        report.n_scenarios,
    )
}

/// Mean attention coefficient over fixed cells versus free cells. The mask
/// channel lives at grid resolution; the α map is coarser by an integral
/// factor, so a coarse cell counts as fixed when any grid cell it covers is.
pub fn attention_concentration(
    alpha: &Tensor4<f32>,
    mask_channel: &[f32],
    grid: GridSpec,
) -> Result<(f64, f64)> {
    if alpha.n != 1 || alpha.c != 1 {
        return Err(Error::shape(
            "attention concentration",
            "(1, 1, h, w) map",
            format!("{:?}", alpha.dims()),
        ));
    }
    if mask_channel.len() != grid.n_cells() {
        return Err(Error::shape(
            "attention concentration",
            format!("{} mask cells", grid.n_cells()),
            format!("{}", mask_channel.len()),
        ));
    }
    if grid.height % alpha.h != 0 || grid.width % alpha.w != 0 {
        return Err(Error::invalid(
            "attention concentration",
            format!(
                "map {}x{} does not evenly divide grid {}x{}",
                alpha.h, alpha.w, grid.height, grid.width
            ),
        ));
    }
    let fr = grid.height / alpha.h;
    let fc = grid.width / alpha.w;
    let mut fixed_sum = 0.0;
    let mut fixed_n = 0usize;
    let mut free_sum = 0.0;
    let mut free_n = 0usize;
    for r in 0..alpha.h {
        for c in 0..alpha.w {
            let mut fixed = false;
            'scan: for dr in 0..fr {
                for dc in 0..fc {
                    if mask_channel[grid.index(r * fr + dr, c * fc + dc)] > 0.5 {
                        fixed = true;
                        break 'scan;
                    }
                }
            }
            let v = alpha.at(0, 0, r, c) as f64;
            if fixed {
                fixed_sum += v;
                fixed_n += 1;
            } else {
                free_sum += v;
                free_n += 1;
            }
        }
    }
    if fixed_n == 0 || free_n == 0 {
        return Err(Error::invalid(
            "attention concentration",
            "down-sampled mask has no fixed/free split at this resolution",
        ));
    }
    Ok((fixed_sum / fixed_n as f64, free_sum / free_n as f64))
}
