//! The `bbflow` command-line driver.
//!
//! Every command writes `run_config.toml` (the fully resolved configuration,
//! seed included) into its output directory. Relative output paths are placed
//! under `$BBFLOW_OUTPUT_ROOT` when it is set.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 missing or
//! unreadable checkpoint, 4 configuration error.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::geom::FoldLabel;
use crate::sampler::ScheduleKind;

pub use commands::{SampleManifest, SAMPLE_MANIFEST};

pub const OUTPUT_ROOT_ENV: &str = "BBFLOW_OUTPUT_ROOT";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bbflow", version, about = "Flow-matching Cα backbone generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled toy dataset.
    Toydata(ToydataArgs),
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Fine-tune low-rank adapters on top of a checkpoint.
    LoraFinetune(LoraArgs),
    /// Generate backbones from a checkpoint.
    Sample(SampleArgs),
    /// Evaluate a sample directory.
    Eval(EvalArgs),
    /// Re-classification probabilities of conditioned samples.
    Reclass(ReclassArgs),
    /// Equivariance analysis of a checkpoint.
    Equiv(EquivArgs),
    /// Train the fold classifier.
    ClassifyTrain(ClassifyTrainArgs),
}

#[derive(Debug, Args)]
pub struct ToydataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with `n`, `seed`, `spec` and optional `filter` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Comma-separated topology ids (0..12).
    #[arg(long, value_delimiter = ',')]
    pub topologies: Option<Vec<u32>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Apply the structural filters before writing.
    #[arg(long)]
    pub filter: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model preset: desk, desk-no-tri or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LoraArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fold adapters into the weights before saving.
    #[arg(long)]
    pub merge: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtArg {
    Main,
    OneMinusT,
    Tan,
    Zero,
}

impl From<GtArg> for ScheduleKind {
    fn from(g: GtArg) -> Self {
        match g {
            GtArg::Main => ScheduleKind::Main,
            GtArg::OneMinusT => ScheduleKind::OneMinusT,
            GtArg::Tan => ScheduleKind::Tan,
            GtArg::Zero => ScheduleKind::Zero,
        }
    }
}

fn parse_label(s: &str) -> std::result::Result<FoldLabel, String> {
    FoldLabel::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub gt: Option<GtArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Same as `--gt zero`.
    #[arg(long, conflicts_with = "gt")]
    pub ode: bool,
    #[arg(long)]
    pub self_cond: bool,
    /// `C`, `C.A` or `C.A.T`.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<FoldLabel>,
    /// Weaker checkpoint for autoguidance (`--alpha > 0`).
    #[arg(long)]
    pub bad_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Reference dataset for novelty and the distribution metrics.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Defaults to `<samples>/eval`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub tm_threshold: f64,
}

#[derive(Debug, Args)]
pub struct ReclassArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
    /// Defaults to `<samples>/reclass`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EquivArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::metrics::equivariance::DEFAULT_N_MC)]
    pub n_mc: usize,
    /// Comma-separated times in [0, 1).
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ClassifyTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Exit status for an error returned by [`run`].
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toydata(a) => commands::toydata(a),
        Command::Train(a) => commands::train(a),
        Command::LoraFinetune(a) => commands::lora_finetune(a),
        Command::Sample(a) => commands::sample(a),
        Command::Eval(a) => commands::eval(a),
        Command::Reclass(a) => commands::reclass(a),
        Command::Equiv(a) => commands::equiv(a),
        Command::ClassifyTrain(a) => commands::classify_train(a),
    }
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Relative output paths go under the output root when one is configured.
pub fn resolve_output(path: &Path) -> PathBuf {
    match output_root() {
        Some(root) if path.is_relative() => root.join(path),
        _ => path.to_path_buf(),
    }
}

/// Relative inputs are taken as given when they exist, else looked up under the output root.
pub fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = output_root() {
            return root.join(path);
        }
    }
    path.to_path_buf()
}
