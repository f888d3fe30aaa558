//! `gwnet` — groundwater-flow surrogate workbench.
//!
//! Subcommands cover the full workflow: generating finite-difference
//! ground-truth datasets, training U-Net / attention U-Net surrogates,
//! evaluating them, exporting single predictions, Monte-Carlo-dropout
//! uncertainty maps, wall-clock benchmarks against the reference solver,
//! and out-of-distribution stress tests.
//!
//! Exit codes: 0 success, 2 invalid configuration or input data,
//! 3 data generation / solver failure, 4 training divergence,
//! 5 checkpoint format problems.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "gwnet",
    about = "Finite-difference groundwater datasets and neural surrogates",
    version,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets with the steady-state solver
    Generate(GenerateArgs),
    /// Train a surrogate on a generated dataset directory
    Train(TrainArgs),
    /// Evaluate a checkpoint: metrics, ranking, best/worst gallery
    Eval(EvalArgs),
    /// Export prediction, target, error map and head contours for one sample
    Predict(PredictArgs),
    /// Monte-Carlo-dropout mean and standard-deviation maps for one sample
    Uncertainty(UncertaintyArgs),
    /// Wall-clock benchmark: solver versus surrogate on fresh scenarios
    Bench(BenchArgs),
    /// Accuracy on harder-than-training scenario distributions
    Generalize(GeneralizeArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Output directory (train.gwds, val.gwds, test.gwds, run.manifest)
    #[arg(long)]
    pub out: PathBuf,
    /// Number of training samples
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    /// Number of validation samples
    #[arg(long, default_value_t = 500)]
    pub val: usize,
    /// Number of test samples
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    /// Grid height and width
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Base RNG seed (val uses seed+1, test seed+2); GW_SEED overrides
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum wells per scenario
    #[arg(long, default_value_t = 1)]
    pub wells_min: usize,
    /// Maximum wells per scenario
    #[arg(long, default_value_t = 3)]
    pub wells_max: usize,
    /// Worker threads for sample generation (default: all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory holding train.gwds and val.gwds
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (model.gwck, history.csv, snapshots/)
    #[arg(long)]
    pub out: PathBuf,
    /// Architecture: unet or attention-unet
    #[arg(long, default_value = "attention-unet")]
    pub model: String,
    /// Training epochs
    #[arg(long, default_value_t = gwnet_core::train::DEFAULT_EPOCHS)]
    pub epochs: usize,
    /// Starting Adam learning rate (held, then cosine-annealed to --lr-final)
    #[arg(long, default_value_t = gwnet_core::train::DEFAULT_LEARNING_RATE)]
    pub lr: f64,
    /// Learning rate at the last epoch
    #[arg(long, default_value_t = 0.0)]
    pub lr_final: f64,
    /// Fraction of epochs at the starting rate before the anneal (1 = constant)
    #[arg(long, default_value_t = gwnet_core::train::DEFAULT_LR_HOLD_FRAC)]
    pub lr_hold_frac: f64,
    /// Mini-batch size (minimum 2, required by batch norm)
    #[arg(long, default_value_t = gwnet_core::train::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    /// Seed for init, shuffling, and dropout; GW_SEED overrides
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Divide every encoder width by this power of two (smaller model)
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
    /// Epochs at which attention maps are captured, e.g. 10,40,130
    #[arg(long, value_delimiter = ',')]
    pub snapshot_epochs: Option<Vec<usize>>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model checkpoint (.gwck)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file (.gwds)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (metrics.csv, per_sample_mse.csv, ranking.csv, gallery/)
    #[arg(long)]
    pub out: PathBuf,
    /// Random subset size used for the best/worst ranking
    #[arg(long, default_value_t = 500)]
    pub subset: usize,
    /// Number of best and of worst samples to rank and render
    #[arg(long, default_value_t = 5)]
    pub topk: usize,
    /// Evaluation batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Seed for the ranking subset draw; GW_SEED overrides
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Model checkpoint (.gwck)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file (.gwds)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (pred.pgm, target.pgm, error.pgm, contours.csv)
    #[arg(long)]
    pub out: PathBuf,
    /// Sample index within the dataset
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Args)]
pub struct UncertaintyArgs {
    /// Model checkpoint (.gwck)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file (.gwds)
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (mean.pgm, std.pgm)
    #[arg(long)]
    pub out: PathBuf,
    /// Sample index within the dataset
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Number of stochastic forward passes
    #[arg(long, default_value_t = 1000)]
    pub passes: usize,
    /// Keep dropout off (control run; std collapses to zero)
    #[arg(long, default_value_t = false)]
    pub disable_dropout: bool,
    /// Seed for the dropout streams; GW_SEED overrides
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Model checkpoint (.gwck)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory (bench.txt)
    #[arg(long)]
    pub out: PathBuf,
    /// Timed repetitions per scenario set
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Untimed warm-up repetitions
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    /// Scenarios per repetition
    #[arg(long, default_value_t = 10)]
    pub scenarios: usize,
    /// Grid height and width
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Scenario seed; GW_SEED overrides
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args)]
pub struct GeneralizeArgs {
    /// Model checkpoint (.gwck)
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory (generalization.txt)
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per distribution
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Grid height and width
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Base seed for the stress distributions; GW_SEED overrides
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Evaluation batch size
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => commands::cmd_generate(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Predict(args) => commands::cmd_predict(args),
        Command::Uncertainty(args) => commands::cmd_uncertainty(args),
        Command::Bench(args) => commands::cmd_bench(args),
        Command::Generalize(args) => commands::cmd_generalize(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(commands::exit_code(&err) as u8)
        }
    }
}
