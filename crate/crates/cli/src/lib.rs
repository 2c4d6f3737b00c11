//! The `payload-sentinel` command line.
//!
//! Every command reads its settings from flags, optionally layered over a
//! `--config` file (see [`settings`]), and writes its outputs plus a
//! `manifest.json` into `--out-dir`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use payload_sentinel::pipeline::PipelineError;

mod commands;
pub mod manifest;
pub mod settings;

pub use manifest::{InputDigest, RunManifest};

/// Process exit status for each failure class.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration. Exit 1.
    Usage(String),
    /// Unreadable, malformed or mismatched data. Exit 2.
    Data(String),
    /// Training produced non-finite values. Exit 3.
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(m) => Self::Usage(m),
            PipelineError::Model(payload_sentinel::nn::ModelError::InvalidConfig(m)) => Self::Usage(m),
            PipelineError::Feature(payload_sentinel::blockfeat::FeatureError::NonPositive { field }) => {
                Self::Usage(format!("{field} must be at least 1"))
            }
            PipelineError::Diverged { epoch, .. } => Self::Diverged(format!("epoch {epoch}")),
            other => Self::Data(other.to_string()),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(
    name = "payload-sentinel",
    version,
    about = "Block-feature payload anomaly detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert raw captures or HTTP dumps into the canonical labeled-lines file.
    Ingest(IngestArgs),
    /// Split, fit the block dictionary and train a model.
    Train(TrainArgs),
    /// Score a trained model on a canonical dataset.
    Eval(EvalArgs),
    /// Train and test every variant with and without block features.
    Ablation(AblationArgs),
    /// Train and test one model per value of a single hyperparameter.
    Sweep(SweepArgs),
    /// Insert runs of '0' bytes into payloads.
    Perturb(PerturbArgs),
    /// Render JSONL logs as tables next to the published reference numbers.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input files; for csic-text these hold normal traffic unless --label says otherwise.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// csic-text files holding anomalous traffic.
    #[arg(long, num_args = 1..)]
    pub anomalous: Vec<PathBuf>,
    /// csic-text, labeled-lines or pcap.
    #[arg(long)]
    pub format: Option<String>,
    /// Label for --input files (required for pcap).
    #[arg(long)]
    pub label: Option<String>,
    /// Keep only the request line and body of HTTP records.
    #[arg(long)]
    pub strip_headers: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Block, model and training settings shared by the training commands.
#[derive(Debug, Args, Default, Clone)]
pub struct RunFlags {
    /// `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub block_length: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub dict_size: Option<usize>,
    #[arg(long)]
    pub chosen_states: Option<usize>,
    /// full, lstm_only or cnn_only.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without validation F1 improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    #[arg(long)]
    pub conv1_filters: Option<usize>,
    #[arg(long)]
    pub conv2_filters: Option<usize>,
    /// Convolution kernel as RxC (or N for NxN).
    #[arg(long)]
    pub filter_size: Option<String>,
    /// Pooling window as RxC (or N for NxN).
    #[arg(long)]
    pub pool_size: Option<String>,
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Canonical labeled-lines dataset.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Replay the input and configuration of an earlier run.
    #[arg(long, conflicts_with = "input")]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory written by `train`.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// all, train, validation or test (split by the training seed).
    #[arg(long)]
    pub split: Option<String>,
    /// Split seed; defaults to the one in the model directory's manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Training seeds, comma separated; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// block_length, stride, dict_size or chosen_states.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Noise seed, also the split seed for test-only.
    #[arg(long)]
    pub seed: Option<u64>,
    /// all (default) or test-only.
    #[arg(long)]
    pub perturb_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSONL files written by train, eval, ablation or sweep.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Sizes the global worker pool from `PAYLOAD_SENTINEL_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PAYLOAD_SENTINEL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("PAYLOAD_SENTINEL_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(a) => commands::ingest(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Eval(a) => commands::eval(a, out),
        Command::Ablation(a) => commands::ablation(a, out),
        Command::Sweep(a) => commands::sweep(a, out),
        Command::Perturb(a) => commands::perturb(a, out),
        Command::Report(a) => commands::report(a, out),
    }
}
