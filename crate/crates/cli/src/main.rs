//! `subfair`: generate data, mine batches, train, evaluate and self-verify.

mod commands;
mod manifest;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use subfair_core::{EncoderKind, LossKind, MinerKind, Scenario};

#[derive(Parser, Debug)]
#[command(
    name = "subfair",
    version,
    about = "Fair representation learning with submodular hard-sample mining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic pool (CSV plus JSON sidecar).
    Gen(GenArgs),
    /// Mine one batch from a pool and compare it with random draws.
    MineDemo(MineDemoArgs),
    /// Two-stage training: mined contrastive encoder, then a classifier head.
    Train(TrainArgs),
    /// Accuracy and fairness report for checkpoints or a prediction file.
    Eval(EvalArgs),
    /// Run the oracle suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    scenario: Scenario,
    /// Random seed; one is generated and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Majority to minority ratio.
    #[arg(long)]
    alpha: Option<u32>,
    /// Strength of the sensitive/nuisance correlation (fairbias).
    #[arg(long)]
    rho: Option<f64>,
    /// Training pool size (fairbias).
    #[arg(long)]
    n: Option<usize>,
    /// Minority cluster size (two-cluster scenarios).
    #[arg(long)]
    n_minor: Option<usize>,
    /// Distance between cluster centres (two-cluster scenarios).
    #[arg(long)]
    separation: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
pub struct MineDemoArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "shasam")]
    miner: MinerKind,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = subfair_core::submodular::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Anchor target label; sampled when omitted.
    #[arg(long, requires = "sensitive")]
    target: Option<u32>,
    /// Anchor sensitive label; sampled when omitted.
    #[arg(long, requires = "target")]
    sensitive: Option<u32>,
    /// Random draws to compare against.
    #[arg(long, default_value_t = 20)]
    draws: usize,
    /// Random Fourier features used before the cosine kernel; 0 uses raw features.
    #[arg(long, default_value_t = subfair_core::mine::DEMO_LIFT_FEATURES)]
    lift_features: usize,
    #[arg(long, default_value_t = subfair_core::mine::DEMO_LIFT_BANDWIDTH)]
    bandwidth: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub miner: Option<MinerKind>,
    #[arg(long)]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    pub epochs1: Option<usize>,
    #[arg(long)]
    pub epochs2: Option<usize>,
    #[arg(long)]
    pub lr1: Option<f64>,
    #[arg(long)]
    pub lr2: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Fraction of the pool drawn into each epoch's ground set.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training pool CSV.
    #[arg(long)]
    pool: PathBuf,
    /// Optional test pool; when given a report.json is written too.
    #[arg(long)]
    test: Option<PathBuf>,
    /// TOML file with any TrainConfig fields. Flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip stage 1 and train the head on raw features (the CE baseline).
    #[arg(long)]
    ce_only: bool,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Classifier checkpoint.
    #[arg(long, conflicts_with = "predictions", requires = "pool")]
    classifier: Option<PathBuf>,
    /// Encoder checkpoint; omit for a head trained on raw features.
    #[arg(long, requires = "classifier")]
    encoder: Option<PathBuf>,
    /// Test pool CSV.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// CSV with header y_true,y_pred,s instead of checkpoints.
    #[arg(long, required_unless_present = "classifier")]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = subfair_core::verify::VERIFY_EPSILON, allow_negative_numbers = true)]
    epsilon: f64,
    /// Also write report.json and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

/// `SUBFAIR_THREADS`, when set, caps the worker pool.
fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("SUBFAIR_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("SUBFAIR_THREADS={v:?} is not a number"))?;
            if n == 0 {
                bail!("SUBFAIR_THREADS must be >= 1");
            }
            Ok(Some(n))
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => bail!("SUBFAIR_THREADS: {e}"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = threads_from_env()?;
    subfair_core::train::run_with_threads(threads, move || match cli.command {
        Command::Gen(a) => commands::gen(a, threads),
        Command::MineDemo(a) => commands::mine_demo(a, threads),
        Command::Train(a) => commands::train(a, threads),
        Command::Eval(a) => commands::eval(a, threads),
        Command::Verify(a) => commands::verify(a, threads),
    })?
}
