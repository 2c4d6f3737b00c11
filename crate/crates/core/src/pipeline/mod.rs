//! Training, evaluation, perturbation and experiment grids.

mod experiments;
mod metrics;
mod perturb;
pub mod report;
mod train;

use thiserror::Error;

use crate::blockfeat::FeatureError;
use crate::ingest::IngestError;
use crate::nn::{Checkpoint, ModelError};

pub use experiments::{
    fit_and_evaluate, reference_grid, run_ablation, run_robustness, run_sweep, AblationCell, FeatureMode,
    RobustnessRow, SweepAxis, SweepRow, TrainedRun,
};
pub use metrics::{evaluate, evaluate_tokens, predict_labels, ConfusionCounts, MetricsReport};
pub use perturb::{noise_length, perturb_samples, random_insertion, random_insertion_at, PerturbMode, NOISE_BYTE};
pub use train::{train, train_tokens, EpochRecord, TrainOutcome, TrainRunConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("checkpoint expects dictionary {checkpoint}, got {dictionary}")]
    FingerprintMismatch { checkpoint: String, dictionary: String },
    #[error("sample id {0} is not in the dataset")]
    UnknownSample(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// Training produced a non-finite loss or parameters. Carries the best
    /// checkpoint seen before the failure (the initial one if none).
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize, last_good: Box<Checkpoint> },
}
