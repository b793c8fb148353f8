//! The `was` command-line harness: SBM dataset generation, teacher
//! pre-training, distillation, ablation and checkpoint evaluation, with
//! every result written to files.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and input errors,
//! 1 for failures during training or while writing outputs.

mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use was::RunConfig;

pub use config::{ExperimentConfig, TaskSpec};
pub use report::{MetricsReport, SeedRun, METRICS_SCHEMA};

/// Environment variable that overrides the configured seed; `--seed` still
/// wins over it.
pub const SEED_ENV: &str = "WAS_SEED";

#[derive(Debug, Parser)]
#[command(name = "was", version, about = "Weigh-and-select multi-teacher distillation for GNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a stochastic block model dataset directory.
    GenData(GenDataArgs),
    /// Pre-train and probe one teacher per task and save the teacher bank.
    Pretrain(PretrainArgs),
    /// Distill a student from a saved teacher bank.
    Distill(DistillArgs),
    /// Run every strategy over the same bank and seeds.
    Ablate(AblateArgs),
    /// Report the accuracy of a student checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Experiment config whose `sbm` block supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the graph and teacher bank come from.
#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Teacher bank directory (default: `<data>/bank`).
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

/// Flags overriding fields of the run configuration.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed, falling back to WAS_SEED and then the config; run r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the distillation term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Distillation temperature.
    #[arg(long)]
    pub tau_kd: Option<f64>,
    /// Gumbel-sigmoid temperature for teacher selection.
    #[arg(long)]
    pub tau_gumbel: Option<f64>,
    /// Momentum of the selecting module's moving average.
    #[arg(long)]
    pub m: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adam weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Student training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Teacher pre-training epochs.
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    /// Linear probe epochs.
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    /// Hidden width of every GCN encoder.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Train the selection MLP with the straight-through estimator.
    #[arg(long)]
    pub train_mlp: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Comma-separated task list (default: dgi,clu,par,pairsim,pairdis).
    #[arg(long)]
    pub tasks: Option<String>,
    /// Teachers pre-trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// was, average, random, all, topk, topk<k>, was-no-mlp or was-no-reweigh.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Number of consecutive seeds to run.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output directory (default: `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip writing the per-epoch selection trace.
    #[arg(long)]
    pub no_trace: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Output directory (default: `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

/// A failed command: the message to print and the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub(crate) fn usage(message: impl fmt::Display) -> Self {
        CliError { code: 2, message: message.to_string() }
    }

    pub(crate) fn runtime(message: impl fmt::Display) -> Self {
        CliError { code: 1, message: message.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Settings shared by the training commands after merging config file,
/// environment and flags.
#[derive(Debug, Clone)]
pub(crate) struct Settings {
    pub experiment: ExperimentConfig,
    pub run: RunConfig,
}

impl Settings {
    /// Precedence: flags, then `WAS_SEED` (seed only), then the config file,
    /// then defaults.
    pub fn resolve(args: &RunArgs, seed_env: Option<&str>) -> Result<Self, CliError> {
        let experiment = match &args.config {
            Some(path) => ExperimentConfig::load(path).map_err(CliError::usage)?,
            None => ExperimentConfig::default(),
        };
        let mut run = experiment.run.clone();
        if let Some(seed) = parse_seed_env(seed_env)? {
            run.seed = seed;
        }
        let overrides = [
            (args.alpha, &mut run.alpha),
            (args.tau_kd, &mut run.tau_kd),
            (args.tau_gumbel, &mut run.tau_gumbel),
            (args.m, &mut run.m),
            (args.lr, &mut run.lr),
            (args.weight_decay, &mut run.weight_decay),
        ];
        for (flag, field) in overrides {
            if let Some(v) = flag {
                *field = v;
            }
        }
        let counts = [
            (args.epochs, &mut run.epochs),
            (args.pretrain_epochs, &mut run.pretrain_epochs),
            (args.probe_epochs, &mut run.probe_epochs),
            (args.hidden, &mut run.hidden),
        ];
        for (flag, field) in counts {
            if let Some(v) = flag {
                *field = v;
            }
        }
        if let Some(seed) = args.seed {
            run.seed = seed;
        }
        run.train_mlp |= args.train_mlp;
        run.validate().map_err(CliError::usage)?;
        Ok(Settings { experiment, run })
    }
}

pub(crate) fn parse_seed_env(value: Option<&str>) -> Result<Option<u64>, CliError> {
    value
        .map(|v| v.trim().parse::<u64>().map_err(|_| CliError::usage(format!("{SEED_ENV}={v:?} is not a seed"))))
        .transpose()
}

/// Runs the harness against the real process environment and standard
/// streams, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let seed_env = std::env::var(SEED_ENV).ok();
    run_with(args, seed_env.as_deref(), &mut io::stdout().lock(), &mut io::stderr().lock())
}

/// Like [`run`], with the `WAS_SEED` value and output streams supplied by
/// the caller.
pub fn run_with<I, T>(args: I, seed_env: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return e.exit_code();
        }
    };
    match commands::execute(cli.command, seed_env, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code
        }
    }
}
