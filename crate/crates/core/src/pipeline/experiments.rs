//! Ablation, sweep and robustness grids.
//!
//! Every cell fits its own dictionary on the training split, trains with the
//! cell's configuration and scores the test split. Cells run one after
//! another; each already uses all worker threads internally.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::train::tokenize_ids;
use super::{
    evaluate_tokens, perturb_samples, train, MetricsReport, PerturbMode, PipelineError, TrainOutcome, TrainRunConfig,
};
use crate::blockfeat::{fit_dictionary_from_payloads, BlockConfig, BlockDictionary};
use crate::ingest::{DatasetSplit, PayloadSample};
use crate::nn::Variant;

/// How payloads become tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The configured block length and stride.
    Block,
    /// One token per byte (`L = 1`, `S = 1`).
    RawBytes,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 2] = [FeatureMode::Block, FeatureMode::RawBytes];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Block => "block",
            Self::RawBytes => "raw_bytes",
        }
    }

    pub fn block_config(self, base: BlockConfig) -> BlockConfig {
        match self {
            Self::Block => base,
            Self::RawBytes => BlockConfig::raw_bytes(base.dict_size),
        }
    }
}

/// A trained and tested configuration.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub dictionary: BlockDictionary,
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
}

fn by_id(samples: &[PayloadSample]) -> HashMap<u64, &PayloadSample> {
    samples.iter().map(|s| (s.id, s)).collect()
}

/// Fits a dictionary on the training split, trains, and scores the test split.
pub fn fit_and_evaluate(
    samples: &[PayloadSample],
    split: &DatasetSplit,
    config: &TrainRunConfig,
) -> Result<TrainedRun, PipelineError> {
    config.validate()?;
    let index = by_id(samples);
    let train_payloads = split
        .train
        .iter()
        .map(|id| {
            index
                .get(id)
                .map(|s| s.payload.as_slice())
                .ok_or(PipelineError::UnknownSample(*id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dictionary = fit_dictionary_from_payloads(train_payloads, config.block)?;
    let outcome = train(samples, split, &dictionary, config, |_| {})?;
    let test_set = tokenize_ids(&split.test, &index, &dictionary)?;
    let test = evaluate_tokens(&test_set, &outcome.checkpoint.params, &outcome.checkpoint.model)?;
    Ok(TrainedRun {
        dictionary,
        outcome,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub features: FeatureMode,
    pub seed: u64,
    pub test: MetricsReport,
}

/// Trains and tests {full, lstm_only, cnn_only} × {block, raw bytes} for
/// every seed. Cells come back ordered by (seed, features, variant).
pub fn run_ablation(
    samples: &[PayloadSample],
    split: &DatasetSplit,
    base: &TrainRunConfig,
    seeds: &[u64],
) -> Result<Vec<AblationCell>, PipelineError> {
    let mut cells = Vec::with_capacity(seeds.len() * 6);
    for &seed in seeds {
        for features in FeatureMode::ALL {
            for variant in Variant::ALL {
                let cfg = TrainRunConfig {
                    seed,
                    block: features.block_config(base.block),
                    model: base.model.with_variant(variant),
                    ..*base
                };
                let run = fit_and_evaluate(samples, split, &cfg)?;
                cells.push(AblationCell {
                    variant,
                    features,
                    seed,
                    test: run.test,
                });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BlockLength,
    Stride,
    DictSize,
    ChosenStates,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [Self::BlockLength, Self::Stride, Self::DictSize, Self::ChosenStates];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BlockLength => "block_length",
            Self::Stride => "stride",
            Self::DictSize => "dict_size",
            Self::ChosenStates => "chosen_states",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &TrainRunConfig, value: usize) -> TrainRunConfig {
        let mut c = *base;
        match self {
            Self::BlockLength => c.block.block_length = value,
            Self::Stride => c.block.stride = value,
            Self::DictSize => c.block.dict_size = value,
            Self::ChosenStates => c.model.chosen_states = value,
        }
        c
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s || a.as_str().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown sweep axis {s:?}"))
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The values originally explored along each axis. Each contains the
/// default configuration's value.
pub fn reference_grid(axis: SweepAxis) -> &'static [usize] {
    match axis {
        SweepAxis::BlockLength => &[1, 2, 3, 4, 5],
        SweepAxis::Stride => &[1, 2, 3],
        SweepAxis::DictSize => &[5_000, 10_000, 15_000, 20_000],
        SweepAxis::ChosenStates => &[5, 20, 50, 100],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub test: MetricsReport,
}

/// One run per value with everything else taken from `base`. All values
/// are validated before any training starts.
pub fn run_sweep(
    samples: &[PayloadSample],
    split: &DatasetSplit,
    base: &TrainRunConfig,
    axis: SweepAxis,
    values: &[usize],
) -> Result<Vec<SweepRow>, PipelineError> {
    let configs = values
        .iter()
        .map(|&v| {
            let c = axis.apply(base, v);
            c.validate()
                .map_err(|e| PipelineError::InvalidConfig(format!("{axis} = {v}: {e}")))?;
            Ok((v, c))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    configs
        .into_iter()
        .map(|(value, cfg)| {
            Ok(SweepRow {
                axis,
                value,
                test: fit_and_evaluate(samples, split, &cfg)?.test,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub variant: Variant,
    pub mode: PerturbMode,
    pub clean: MetricsReport,
    pub perturbed: MetricsReport,
}

impl RobustnessRow {
    /// Detection-rate loss in percentage points.
    pub fn dr_drop_points(&self) -> f64 {
        (self.clean.dr - self.perturbed.dr) * 100.0
    }
}

/// Clean versus random-insertion test metrics per variant. With
/// [`PerturbMode::All`] the perturbed model is retrained on perturbed data;
/// with [`PerturbMode::TestOnly`] the clean model is scored on a perturbed
/// test split.
pub fn run_robustness(
    samples: &[PayloadSample],
    split: &DatasetSplit,
    base: &TrainRunConfig,
    variants: &[Variant],
    mode: PerturbMode,
    noise_seed: u64,
) -> Result<Vec<RobustnessRow>, PipelineError> {
    let noisy = perturb_samples(samples, noise_seed, mode, Some(split));
    variants
        .iter()
        .map(|&variant| {
            let cfg = TrainRunConfig {
                model: base.model.with_variant(variant),
                ..*base
            };
            let clean = fit_and_evaluate(samples, split, &cfg)?;
            let perturbed = match mode {
                PerturbMode::All => fit_and_evaluate(&noisy, split, &cfg)?.test,
                PerturbMode::TestOnly => {
                    let test = tokenize_ids(&split.test, &by_id(&noisy), &clean.dictionary)?;
                    let ck = &clean.outcome.checkpoint;
                    evaluate_tokens(&test, &ck.params, &ck.model)?
                }
            };
            Ok(RobustnessRow {
                variant,
                mode,
                clean: clean.test,
                perturbed,
            })
        })
        .collect()
}
