//! Random-insertion noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{DatasetSplit, PayloadSample};
use crate::nn::mix_seed;

/// ASCII `'0'`.
pub const NOISE_BYTE: u8 = b'0';

/// `max(1, floor(len / 5))` for a non-empty payload, 0 for an empty one.
pub fn noise_length(len: usize) -> usize {
    if len == 0 {
        0
    } else {
        (len / 5).max(1)
    }
}

/// Inserts a run of [`NOISE_BYTE`] of [`noise_length`] bytes at a seeded
/// uniform index in `0..=len`, returning the sample and the index. An empty
/// payload is returned unchanged with index 0.
pub fn random_insertion_at(sample: &PayloadSample, seed: u64) -> (PayloadSample, usize) {
    let len = sample.payload.len();
    if len == 0 {
        return (sample.clone(), 0);
    }
    let at = ChaCha8Rng::seed_from_u64(seed).random_range(0..=len);
    let mut payload = Vec::with_capacity(len + noise_length(len));
    payload.extend_from_slice(&sample.payload[..at]);
    payload.resize(at + noise_length(len), NOISE_BYTE);
    payload.extend_from_slice(&sample.payload[at..]);
    (
        PayloadSample {
            payload,
            ..sample.clone()
        },
        at,
    )
}

pub fn random_insertion(sample: &PayloadSample, seed: u64) -> PayloadSample {
    random_insertion_at(sample, seed).0
}

/// Which samples a perturbation run touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Every sample, so the model is also trained on perturbed data.
    #[default]
    All,
    /// Only the test split; the model is trained on clean data.
    TestOnly,
}

impl std::str::FromStr for PerturbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all" => Ok(Self::All),
            "test-only" => Ok(Self::TestOnly),
            _ => Err(format!("unknown perturb mode {s:?} (expected all or test-only)")),
        }
    }
}

/// Perturbs the selected samples. Each sample's insertion seed is derived
/// from `seed` and the sample id, so the result does not depend on order.
/// With [`PerturbMode::TestOnly`] a split is required to know the test ids.
pub fn perturb_samples(
    samples: &[PayloadSample],
    seed: u64,
    mode: PerturbMode,
    split: Option<&DatasetSplit>,
) -> Vec<PayloadSample> {
    let test: Option<std::collections::HashSet<u64>> = match mode {
        PerturbMode::All => None,
        PerturbMode::TestOnly => Some(split.map(|s| s.test.iter().copied().collect()).unwrap_or_default()),
    };
    samples
        .iter()
        .map(|s| match &test {
            Some(ids) if !ids.contains(&s.id) => s.clone(),
            _ => random_insertion(s, mix_seed(seed, s.id)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Label;
    use proptest::prelude::*;

    fn sample(payload: &[u8]) -> PayloadSample {
        PayloadSample::new(7, payload, Label::Anomalous, "t")
    }

    #[test]
    fn ten_bytes_get_two() {
        let s = sample(b"abcdefghij");
        let (out, at) = random_insertion_at(&s, 3);
        assert_eq!(out.payload.len(), 12);
        assert_eq!(&out.payload[at..at + 2], b"00");
        assert_eq!(out.label, Label::Anomalous);
    }

    #[test]
    fn short_payload_gets_one() {
        assert_eq!(noise_length(4), 1);
        assert_eq!(random_insertion(&sample(b"abcd"), 0).payload.len(), 5);
    }

    #[test]
    fn empty_is_unchanged() {
        let s = sample(b"");
        assert_eq!(random_insertion(&s, 9), s);
    }

    #[test]
    fn test_only_touches_test_ids() {
        let samples: Vec<_> = (0..10)
            .map(|i| PayloadSample::new(i, b"payload!", Label::Normal, "t"))
            .collect();
        let split = crate::ingest::split_dataset(&samples, 1).unwrap();
        let out = perturb_samples(&samples, 5, PerturbMode::TestOnly, Some(&split));
        for (a, b) in samples.iter().zip(&out) {
            assert_eq!(split.test.contains(&a.id), a != b);
        }
        assert!(perturb_samples(&samples, 5, PerturbMode::All, None)
            .iter()
            .all(|s| s.payload.len() == 9));
    }

    proptest! {
        #[test]
        fn insertion_is_invertible(payload in proptest::collection::vec(any::<u8>(), 0..300), seed: u64) {
            let s = sample(&payload);
            let (out, at) = random_insertion_at(&s, seed);
            let n = noise_length(payload.len());
            prop_assert_eq!(out.payload.len(), payload.len() + n);
            prop_assert!(at <= payload.len());
            prop_assert!(out.payload[at..at + n].iter().all(|&b| b == NOISE_BYTE));
            let mut restored = out.payload.clone();
            restored.drain(at..at + n);
            prop_assert_eq!(restored, payload);
            prop_assert_eq!(random_insertion_at(&s, seed), (out, at));
        }
    }
}
