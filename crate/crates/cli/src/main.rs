//! `oodkit`: generate synthetic feature datasets, train heads, score samples,
//! evaluate OOD detection and domain-shift error prediction, and monitor a
//! feature stream.
//!
//! Exit status: 0 on success, 1 on runtime errors, 2 on usage errors.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod experiment;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CommonArgs, RunConfig};

/// An error in how the command was invoked (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "oodkit",
    version,
    about = "Post-hoc OOD detection toolkit on feature vectors"
)]
struct Cli {
    /// JSON run config; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic task with irrelevant and novel OOD sets.
    SynthGen(SynthGenArgs),
    /// Train a classification head on a manifest's id-train split.
    TrainHead(TrainHeadArgs),
    /// Write per-sample ID scores for every non-training dataset.
    Score(ScoreArgs),
    /// AUROC of ID test data against OOD sets, or a grid over several datasets.
    EvalOod(EvalOodArgs),
    /// Family-split evaluation of the error regressor under synthetic shift.
    EvalShift(EvalShiftArgs),
    /// Stream OODF feature vectors and emit one NDJSON record per window.
    Monitor(MonitorArgs),
    /// Write mean-score vs error scatter data for shifted datasets.
    ExportScatter(ExportScatterArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Number of ID classes.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 400)]
    pub test_per_class: usize,
    /// Minimum distance between class means.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Minimum distance of irrelevant clusters from every class mean, in separations.
    #[arg(long, default_value_t = 10.0)]
    pub irrelevant_factor: f64,
    /// Distance of each novel cluster from its nearest class mean, in separations.
    #[arg(long, default_value_t = 1.0)]
    pub novel_factor: f64,
    /// Samples in each OOD set.
    #[arg(long, default_value_t = 2000)]
    pub ood_n: usize,
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    /// linear or cosine.
    #[arg(long, default_value = "linear")]
    pub kind: String,
    /// Training epochs (library default when absent).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate (library default when absent).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Dropout rate applied to the input features during training.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Dataset manifest with id-train, id-val and id-test entries.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Master seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Pre-trained linear or cosine head checkpoint to use instead of training one.
    /// Pre-trained head checkpoint to use instead of training one.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalOodArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalShiftArgs {
    /// Number of shift families (7 to 19).
    #[arg(long, default_value_t = 19)]
    pub families: usize,
    /// Training:held-out family counts.
    #[arg(long, default_value = "6:13")]
    pub split: String,
    /// Predict the training families' own test copies instead of held-out ones.
    #[arg(long)]
    pub same_families: bool,
    /// Pre-trained head checkpoint to use instead of training one.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// OODF stream to read; standard input when absent or `-`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    /// Alert when the predicted error (percent) exceeds this.
    #[arg(long)]
    pub target: f64,
    /// Pre-trained head checkpoint to use instead of training one.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ExportScatterArgs {
    #[arg(long, default_value_t = 19)]
    pub families: usize,
    /// Pre-trained head checkpoint to use instead of training one.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("OODKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("OODKIT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let file = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::SynthGen(a) => commands::synth_gen(&a, file),
        Command::TrainHead(a) => commands::train_head(&a, file),
        Command::Score(a) => commands::score(&a, file),
        Command::EvalOod(a) => commands::eval_ood(&a, file),
        Command::EvalShift(a) => commands::eval_shift(&a, file),
        Command::Monitor(a) => commands::monitor(&a, file),
        Command::ExportScatter(a) => commands::export_scatter(&a, file),
    }
}

/// A closed downstream pipe (e.g. `| head`) ends the stream quietly.
fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

/// The error chain joined with `: `, skipping causes already quoted by
/// their parent message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("Run `oodkit --help` for usage.");
            ExitCode::from(2)
        }
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
