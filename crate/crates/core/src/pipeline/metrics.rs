//! Confusion counts and the five detection metrics.
//!
//! Anomalous is the positive class. Every ratio with a zero denominator is
//! defined as 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::blockfeat::{tokenize, BlockDictionary, TokenId};
use crate::ingest::{Label, PayloadSample};
use crate::nn::{forward_batch, Checkpoint, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, r#fn: u64, tn: u64) -> Self {
        Self { tp, fp, r#fn, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.r#fn + self.tn
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Anomalous, Label::Anomalous) => self.tp += 1,
            (Label::Normal, Label::Anomalous) => self.fp += 1,
            (Label::Anomalous, Label::Normal) => self.r#fn += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
        }
    }

    /// Tallies `(truth, predicted)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (t, p) in pairs {
            c.record(t, p);
        }
        c
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    /// Detection rate (recall on anomalies).
    pub dr: f64,
    pub fpr: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    /// Each metric is a single correctly rounded division of two integers.
    /// F1 uses `2tp / (2tp + fp + fn)`, which is the harmonic mean of
    /// precision and detection rate whenever that mean is defined, and 0
    /// exactly when `precision + dr = 0`.
    pub fn from_counts(c: ConfusionCounts) -> Self {
        Self {
            precision: ratio(c.tp, c.tp + c.fp),
            dr: ratio(c.tp, c.tp + c.r#fn),
            fpr: ratio(c.fp, c.fp + c.tn),
            accuracy: ratio(c.tp + c.tn, c.total()),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.r#fn),
            counts: c,
        }
    }
}

/// Inference-mode labels for pre-tokenized sequences, in input order.
pub fn predict_labels(
    seqs: &[&[TokenId]],
    params: &ModelParams<f32>,
    config: &ModelConfig,
) -> Result<Vec<Label>, PipelineError> {
    Ok(forward_batch(seqs, params, config)?
        .into_iter()
        .map(|p| p.label)
        .collect())
}

/// Metrics for labelled token sequences.
pub fn evaluate_tokens(
    samples: &[(Vec<TokenId>, Label)],
    params: &ModelParams<f32>,
    config: &ModelConfig,
) -> Result<MetricsReport, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::NoSamples);
    }
    let seqs: Vec<&[TokenId]> = samples.iter().map(|(t, _)| t.as_slice()).collect();
    let predicted = predict_labels(&seqs, params, config)?;
    let counts = ConfusionCounts::from_pairs(samples.iter().map(|(_, l)| *l).zip(predicted));
    Ok(MetricsReport::from_counts(counts))
}

/// Tokenizes `samples` with `dict` and scores the checkpoint on them.
pub fn evaluate(
    checkpoint: &Checkpoint,
    dict: &BlockDictionary,
    samples: &[PayloadSample],
) -> Result<MetricsReport, PipelineError> {
    let fp = dict.fingerprint();
    if checkpoint.dictionary_fingerprint != fp {
        return Err(PipelineError::FingerprintMismatch {
            checkpoint: checkpoint.dictionary_fingerprint.clone(),
            dictionary: fp,
        });
    }
    let tokens: Vec<(Vec<TokenId>, Label)> = samples
        .par_iter()
        .map(|s| (tokenize(&s.payload, dict), s.label))
        .collect();
    evaluate_tokens(&tokens, &checkpoint.params, &checkpoint.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_split() {
        let r = MetricsReport::from_counts(ConfusionCounts::new(5, 0, 0, 5));
        assert_eq!((r.precision, r.dr, r.fpr, r.accuracy, r.f1), (1.0, 1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn typical_counts() {
        let r = MetricsReport::from_counts(ConfusionCounts::new(99, 2, 1, 98));
        assert_eq!(r.dr, 0.99);
        assert_eq!(r.fpr, 0.02);
        assert_eq!(r.accuracy, 0.985);
    }

    #[test]
    fn no_positive_predictions() {
        let r = MetricsReport::from_counts(ConfusionCounts::new(0, 0, 3, 7));
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.accuracy, 0.7);
        let empty = MetricsReport::from_counts(ConfusionCounts::default());
        assert_eq!(
            (empty.precision, empty.dr, empty.fpr, empty.accuracy, empty.f1),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn counts_serialize_with_short_names() {
        let json = serde_json::to_string(&ConfusionCounts::new(1, 2, 3, 4)).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"fn":3,"tn":4}"#);
    }

    #[test]
    fn evaluate_rejects_empty_input() {
        let cfg = ModelConfig {
            embed_dim: 2,
            lstm_hidden: 2,
            chosen_states: 4,
            conv1_filters: 1,
            conv2_filters: 1,
            filter_size: (2, 2),
            pool_size: (2, 2),
            mlp_hidden: 2,
            dropout_rate: 0.0,
            variant: crate::nn::Variant::Full,
        };
        let p = ModelParams::init(&cfg, 3, 0);
        assert!(matches!(evaluate_tokens(&[], &p, &cfg), Err(PipelineError::NoSamples)));
    }
}
