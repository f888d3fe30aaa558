//! Implementations of the subcommands. Every command resolves its full
//! configuration (including the GW_SEED override), writes `run.manifest`
//! into its output directory, then produces its artifacts.

use std::fs;
use std::path::Path;

use gwnet_core::datagen::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetConfig,
};
use gwnet_core::grid::GridSpec;
use gwnet_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use gwnet_core::model::{build_model, Model, ModelConfig, Variant, GRID_DIVISOR};
use gwnet_core::train::analysis::{
    benchmark_table, benchmark_wallclock, generalization_suite, generalization_table,
    mc_dropout_predict, rank_predictions, RankedSample,
};
use gwnet_core::train::{
    evaluate_metrics, history_csv, train, TrainConfig, DEFAULT_SNAPSHOT_EPOCHS,
};
use gwnet_core::{Error, Result};

use crate::artifacts::{write_contours_csv, write_pgm16, write_run_manifest};
use crate::{
    BenchArgs, EvalArgs, GenerateArgs, GeneralizeArgs, PredictArgs, TrainArgs, UncertaintyArgs,
};

/// `--seed` unless the GW_SEED environment variable overrides it.
fn resolve_seed(flag_seed: u64) -> Result<(u64, &'static str)> {
    match std::env::var("GW_SEED") {
        Ok(text) => {
            let seed = text.trim().parse::<u64>().map_err(|e| {
                Error::invalid("GW_SEED", format!("cannot parse {text:?} as u64: {e}"))
            })?;
            Ok((seed, "env GW_SEED"))
        }
        Err(_) => Ok((flag_seed, "--seed flag")),
    }
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn parse_variant(name: &str) -> Result<Variant> {
    Variant::parse(name)
}

fn model_config_for(variant: Variant, width_divisor: usize) -> Result<ModelConfig> {
    ModelConfig::new(variant).with_width_divisor(width_divisor)
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    load_checkpoint(path)
}

fn sample_image<'d>(data: &'d Dataset, index: usize) -> Result<&'d gwnet_core::grid::Sample> {
    data.samples.get(index).ok_or_else(|| {
        Error::invalid(
            "sample index",
            format!("index {index} outside dataset of {}", data.samples.len()),
        )
    })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Error::invalid("--jobs", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::invalid("--jobs", e.to_string()))?;
    }
    let (seed, seed_source) = resolve_seed(args.seed)?;
    let grid = GridSpec::new(args.size, args.size)?;
    ensure_out_dir(&args.out)?;

    let mut base = DatasetConfig::new(grid, 0, seed);
    base.well_count_range = (args.wells_min, args.wells_max);

    let mut manifest: Vec<(&str, String)> = vec![
        ("out", args.out.display().to_string()),
        ("size", args.size.to_string()),
        ("seed", seed.to_string()),
        ("seed_source", seed_source.to_string()),
        ("wells_min", args.wells_min.to_string()),
        ("wells_max", args.wells_max.to_string()),
        ("train_samples", args.train.to_string()),
        ("val_samples", args.val.to_string()),
        ("test_samples", args.test.to_string()),
        (
            "jobs",
            args.jobs
                .map(|j| j.to_string())
                .unwrap_or_else(|| "auto".to_string()),
        ),
    ];
    if args.size % GRID_DIVISOR != 0 {
        manifest.push((
            "warning",
            format!(
                "grid size {} is not divisible by {GRID_DIVISOR}; the surrogate models will reject these samples",
                args.size
            ),
        ));
    }

    for (name, count, seed_offset) in [
        ("train", args.train, 0u64),
        ("val", args.val, 1),
        ("test", args.test, 2),
    ] {
        let mut config = base.clone();
        config.n_samples = count;
        config.seed = seed.wrapping_add(seed_offset);
        let dataset = generate_dataset(&config)?;
        let path = args.out.join(format!("{name}.gwds"));
        write_dataset(&dataset, &path)?;
        manifest.push(("file", path.display().to_string()));
        println!("wrote {} samples to {}", count, path.display());
    }
    write_run_manifest(&args.out, "generate", &manifest)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (seed, seed_source) = resolve_seed(args.seed)?;
    let variant = parse_variant(&args.model)?;
    let train_path = args.data.join("train.gwds");
    let val_path = args.data.join("val.gwds");
    if !train_path.exists() || !val_path.exists() {
        return Err(Error::invalid(
            "--data",
            format!(
                "expected {} and {}",
                train_path.display(),
                val_path.display()
            ),
        ));
    }
    let train_set = read_dataset(&train_path)?;
    let val_set = read_dataset(&val_path)?;
    ensure_out_dir(&args.out)?;

    let model_config = model_config_for(variant, args.width_divisor)?;
    let mut config = TrainConfig::new(seed);
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.learning_rate = args.lr;
    config.lr_final = args.lr_final;
    config.lr_hold_frac = args.lr_hold_frac;
    config.snapshot_epochs = args
        .snapshot_epochs
        .clone()
        .unwrap_or_else(|| DEFAULT_SNAPSHOT_EPOCHS.to_vec());
    config.validate()?;

    write_run_manifest(
        &args.out,
        "train",
        &[
            ("data", args.data.display().to_string()),
            ("out", args.out.display().to_string()),
            ("model", variant.as_str().to_string()),
            ("width_divisor", args.width_divisor.to_string()),
            ("epochs", config.epochs.to_string()),
            ("batch_size", config.batch_size.to_string()),
            ("learning_rate", format!("{:e}", config.learning_rate)),
            ("lr_final", format!("{:e}", config.lr_final)),
            ("lr_hold_frac", config.lr_hold_frac.to_string()),
            ("adam_beta1", config.adam_beta1.to_string()),
            ("adam_beta2", config.adam_beta2.to_string()),
            ("adam_eps", format!("{:e}", config.adam_eps)),
            ("seed", seed.to_string()),
            ("seed_source", seed_source.to_string()),
            (
                "snapshot_epochs",
                config
                    .snapshot_epochs
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("train_samples", train_set.samples.len().to_string()),
            ("val_samples", val_set.samples.len().to_string()),
        ],
    )?;

    let mut model = build_model(&model_config, &train_set.config.grid, seed)?;
    let report = train(&mut model, &train_set, &val_set, &config)?;

    let checkpoint_path = args.out.join("model.gwck");
    save_checkpoint(&checkpoint_path, &model)?;
    fs::write(args.out.join("history.csv"), history_csv(&report.history))?;

    if !report.snapshots.is_empty() {
        let snap_dir = args.out.join("snapshots");
        fs::create_dir_all(&snap_dir)?;
        for snapshot in &report.snapshots {
            for (p, probe) in snapshot.probes.iter().enumerate() {
                for (g, alpha) in probe.maps.iter().enumerate() {
                    let path = snap_dir.join(format!(
                        "epoch{}_probe{}_gate{}.pgm",
                        snapshot.epoch,
                        p,
                        g + 1
                    ));
                    write_pgm16(&path, alpha.h, alpha.w, &alpha.data)?;
                }
            }
        }
    }
    let last = report.history.last().expect("non-empty history");
    println!(
        "trained {} for {} epochs: train loss {:.6e}, val loss {:.6e}",
        variant, config.epochs, last.train_loss, last.val_loss
    );
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

fn write_gallery(
    dir: &Path,
    model: &Model<f32>,
    data: &Dataset,
    entries: &[RankedSample],
    kind: &str,
) -> Result<()> {
    let pixels = data.config.grid.n_cells();
    let (h, w) = (data.config.grid.height, data.config.grid.width);
    for (rank, entry) in entries.iter().enumerate() {
        let (x, y) = gwnet_core::train::batch_from(data, &[entry.index]);
        let pred = model.forward_eval(&x)?;
        write_pgm16(
            &dir.join(format!("{kind}_{}_pred.pgm", rank + 1)),
            h,
            w,
            &pred.data[..pixels],
        )?;
        write_pgm16(
            &dir.join(format!("{kind}_{}_target.pgm", rank + 1)),
            h,
            w,
            &y.data[..pixels],
        )?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (seed, seed_source) = resolve_seed(args.seed)?;
    let model = load_model(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    ensure_out_dir(&args.out)?;
    let subset = args.subset.min(data.samples.len());

    write_run_manifest(
        &args.out,
        "eval",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("data", args.data.display().to_string()),
            ("out", args.out.display().to_string()),
            ("subset", subset.to_string()),
            ("topk", args.topk.to_string()),
            ("batch_size", args.batch.to_string()),
            ("seed", seed.to_string()),
            ("seed_source", seed_source.to_string()),
        ],
    )?;

    let report = evaluate_metrics(&model, &data, args.batch)?;
    fs::write(
        args.out.join("metrics.csv"),
        format!(
            "rmse,r2,n_samples\n{:.9e},{:.9},{}\n",
            report.rmse,
            report.r2,
            report.per_sample_mse.len()
        ),
    )?;
    let mut per_sample = String::from("index,mse\n");
    for (i, mse) in report.per_sample_mse.iter().enumerate() {
        per_sample.push_str(&format!("{i},{mse:.9e}\n"));
    }
    fs::write(args.out.join("per_sample_mse.csv"), per_sample)?;

    let (best, worst) = rank_predictions(&model, &data, subset, args.topk, seed, args.batch)?;
    let mut ranking = String::from("kind,rank,index,mse\n");
    for (rank, e) in best.iter().enumerate() {
        ranking.push_str(&format!("best,{},{},{:.9e}\n", rank + 1, e.index, e.mse));
    }
    for (rank, e) in worst.iter().enumerate() {
        ranking.push_str(&format!("worst,{},{},{:.9e}\n", rank + 1, e.index, e.mse));
    }
    fs::write(args.out.join("ranking.csv"), ranking)?;

    let gallery = args.out.join("gallery");
    fs::create_dir_all(&gallery)?;
    write_gallery(&gallery, &model, &data, &best, "best")?;
    write_gallery(&gallery, &model, &data, &worst, "worst")?;

    println!(
        "rmse {:.6e}  r2 {:.6}  ({} samples; best/worst-{} gallery in {})",
        report.rmse,
        report.r2,
        report.per_sample_mse.len(),
        args.topk,
        gallery.display()
    );
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    let sample = sample_image(&data, args.index)?;
    ensure_out_dir(&args.out)?;
    write_run_manifest(
        &args.out,
        "predict",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("data", args.data.display().to_string()),
            ("out", args.out.display().to_string()),
            ("index", args.index.to_string()),
        ],
    )?;
    let grid = sample.grid;
    let (x, y) = gwnet_core::train::batch_from(&data, &[args.index]);
    let pred = model.forward_eval(&x)?;
    let pixels = grid.n_cells();
    let error: Vec<f32> = (0..pixels)
        .map(|i| (pred.data[i] - y.data[i]).abs())
        .collect();
    write_pgm16(&args.out.join("pred.pgm"), grid.height, grid.width, &pred.data[..pixels])?;
    write_pgm16(&args.out.join("target.pgm"), grid.height, grid.width, &y.data[..pixels])?;
    write_pgm16(&args.out.join("error.pgm"), grid.height, grid.width, &error)?;
    write_contours_csv(
        &args.out.join("contours.csv"),
        &pred.data[..pixels],
        grid.height,
        grid.width,
    )?;
    let mse: f64 = error.iter().map(|&e| (e as f64) * (e as f64)).sum::<f64>() / pixels as f64;
    println!("sample {}: mse {:.6e}; artifacts in {}", args.index, mse, args.out.display());
    Ok(())
}

pub fn cmd_uncertainty(args: &UncertaintyArgs) -> Result<()> {
    let (seed, seed_source) = resolve_seed(args.seed)?;
    let model = load_model(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    let sample = sample_image(&data, args.index)?;
    ensure_out_dir(&args.out)?;
    write_run_manifest(
        &args.out,
        "uncertainty",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("data", args.data.display().to_string()),
            ("out", args.out.display().to_string()),
            ("index", args.index.to_string()),
            ("passes", args.passes.to_string()),
            ("dropout", (!args.disable_dropout).to_string()),
            ("seed", seed.to_string()),
            ("seed_source", seed_source.to_string()),
        ],
    )?;
    let grid = sample.grid;
    let (x, _) = gwnet_core::train::batch_from(&data, &[args.index]);
    let (mean, std) = mc_dropout_predict(&model, &x, args.passes, seed, !args.disable_dropout)?;
    let pixels = grid.n_cells();
    write_pgm16(&args.out.join("mean.pgm"), grid.height, grid.width, &mean.data[..pixels])?;
    write_pgm16(&args.out.join("std.pgm"), grid.height, grid.width, &std.data[..pixels])?;
    let max_std = std.data.iter().fold(0.0f32, |a, &b| a.max(b));
    println!(
        "{} passes on sample {}: max std {:.6e}; maps in {}",
        args.passes,
        args.index,
        max_std,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let (seed, seed_source) = resolve_seed(args.seed)?;
    let model = load_model(&args.checkpoint)?;
    let grid = GridSpec::new(args.size, args.size)?;
    ensure_out_dir(&args.out)?;
    write_run_manifest(
        &args.out,
        "bench",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("out", args.out.display().to_string()),
            ("size", args.size.to_string()),
            ("scenarios", args.scenarios.to_string()),
            ("runs", args.runs.to_string()),
            ("warmup", args.warmup.to_string()),
            ("seed", seed.to_string()),
            ("seed_source", seed_source.to_string()),
        ],
    )?;
    let config = DatasetConfig::new(grid, args.scenarios, seed);
    let report = benchmark_wallclock(&model, &config, args.scenarios, args.runs, args.warmup)?;
    let table = benchmark_table(&report);
    fs::write(args.out.join("bench.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_generalize(args: &GeneralizeArgs) -> Result<()> {
    let (seed, seed_source) = resolve_seed(args.seed)?;
    let model = load_model(&args.checkpoint)?;
    let grid = GridSpec::new(args.size, args.size)?;
    ensure_out_dir(&args.out)?;
    write_run_manifest(
        &args.out,
        "generalize",
        &[
            ("checkpoint", args.checkpoint.display().to_string()),
            ("out", args.out.display().to_string()),
            ("size", args.size.to_string()),
            ("samples", args.samples.to_string()),
            ("batch_size", args.batch.to_string()),
            ("seed", seed.to_string()),
            ("seed_source", seed_source.to_string()),
        ],
    )?;
    let base = DatasetConfig::new(grid, args.samples, seed);
    let rows = generalization_suite(&model, &base, args.samples, args.batch)?;
    let table = generalization_table(&rows);
    fs::write(args.out.join("generalization.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Exit code for a failed run: 2 config/input, 3 generation/solver,
/// 4 training divergence, 5 checkpoint problems.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invalid { .. }
        | Error::Shape { .. }
        | Error::Io(_)
        | Error::Format { .. }
        | Error::DegenerateSystem(_) => 2,
        Error::Generation { .. } | Error::FieldGeneration(_) | Error::Convergence { .. } => 3,
        Error::Divergence(_) => 4,
        Error::Checkpoint(_) => 5,
    }
}
