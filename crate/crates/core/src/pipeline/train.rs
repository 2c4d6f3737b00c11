//! Mini-batch training with validation-based model selection.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_tokens, MetricsReport, PipelineError};
use crate::blockfeat::{tokenize, BlockConfig, BlockDictionary, TokenId};
use crate::ingest::{DatasetSplit, Label, PayloadSample};
use crate::nn::{
    loss_and_gradients, mix_seed, Adam, AdamConfig, Checkpoint, ModelConfig, ModelError, ModelParams, Sample,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without a validation F1 improvement before stopping.
    pub early_stop_patience: usize,
    pub block: BlockConfig,
    /// Includes the model variant.
    pub model: ModelConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-4,
            seed: 0,
            early_stop_patience: 5,
            block: BlockConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return Err(PipelineError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        self.block.validate()?;
        self.model.validate()?;
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the per-batch mean losses.
    pub train_loss: f64,
    pub validation: MetricsReport,
    /// Whether this epoch produced the kept checkpoint so far.
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Tokenizes the split members of `samples` in split order.
pub(crate) fn tokenize_ids(
    ids: &[u64],
    by_id: &HashMap<u64, &PayloadSample>,
    dict: &BlockDictionary,
) -> Result<Vec<(Vec<TokenId>, Label)>, PipelineError> {
    ids.par_iter()
        .map(|id| {
            let s = by_id.get(id).ok_or(PipelineError::UnknownSample(*id))?;
            Ok((tokenize(&s.payload, dict), s.label))
        })
        .collect()
}

/// Trains on `split.train`, selecting by F1 on `split.validation`.
/// `dict` must have been fit on the training split.
pub fn train(
    samples: &[PayloadSample],
    split: &DatasetSplit,
    dict: &BlockDictionary,
    config: &TrainRunConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    if dict.config() != &config.block {
        return Err(PipelineError::InvalidConfig(
            "dictionary block settings differ from the run configuration".into(),
        ));
    }
    let by_id: HashMap<u64, &PayloadSample> = samples.iter().map(|s| (s.id, s)).collect();
    let train_set = tokenize_ids(&split.train, &by_id, dict)?;
    let val_set = tokenize_ids(&split.validation, &by_id, dict)?;
    train_tokens(&train_set, &val_set, dict.len(), &dict.fingerprint(), config, on_epoch)
}

/// [`train`] on already tokenized data with ids in `0..=vocab_len`.
pub fn train_tokens(
    train_set: &[(Vec<TokenId>, Label)],
    val_set: &[(Vec<TokenId>, Label)],
    vocab_len: usize,
    dictionary_fingerprint: &str,
    config: &TrainRunConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(PipelineError::NoSamples);
    }
    let model = config.model;
    let mut params = ModelParams::<f32>::init(&model, vocab_len, config.seed);
    let mut opt = Adam::new(&params, AdamConfig::default());
    let snapshot = |p: &ModelParams<f32>| Checkpoint {
        model,
        dictionary_fingerprint: dictionary_fingerprint.to_string(),
        params: p.clone(),
    };
    let mut best = snapshot(&params);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let lr = config.lr as f32;

    for epoch in 1..=config.epochs {
        let epoch_seed = mix_seed(config.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample<'_>> = chunk
                .iter()
                .map(|&i| (train_set[i].0.as_slice(), train_set[i].1))
                .collect();
            let diverged = || PipelineError::Diverged {
                epoch,
                last_good: Box::new(best.clone()),
            };
            let (loss, grads) = match loss_and_gradients(&batch, &params, &model, mix_seed(epoch_seed, bi as u64)) {
                Ok(r) => r,
                Err(ModelError::NonFiniteLoss) => return Err(diverged()),
                Err(e) => return Err(e.into()),
            };
            opt.step(&mut params, &grads, lr)?;
            if !params.all_finite() {
                return Err(diverged());
            }
            loss_sum += f64::from(loss);
            batches += 1;
        }
        let validation = evaluate_tokens(val_set, &params, &model)?;
        let improved = validation.f1 > best_f1;
        if improved {
            best_f1 = validation.f1;
            best_epoch = epoch;
            best = snapshot(&params);
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            validation,
            improved,
        };
        on_epoch(&record);
        log.push(record);
        if epoch - best_epoch >= config.early_stop_patience && epoch < config.epochs {
            return Ok(TrainOutcome {
                checkpoint: best,
                log,
                best_epoch,
                stopped_early: true,
            });
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        best_epoch,
        stopped_early: false,
    })
}
