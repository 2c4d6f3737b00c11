//! Seeded 70/10/20 train/validation/test partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IngestError, Label, PayloadSample};

pub const MIN_SPLIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub test: Vec<u64>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Sizes of (train, validation, test) for `n` samples. Validation and
    /// test get the floor of 10% and 20%; the remainder goes to train.
    pub fn sizes(n: usize) -> (usize, usize, usize) {
        let val = n / 10;
        let test = n / 5;
        (n - val - test, val, test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffles sample ids with a seeded permutation and cuts them 70/10/20.
pub fn split_dataset(samples: &[PayloadSample], seed: u64) -> Result<DatasetSplit, IngestError> {
    if samples.len() < MIN_SPLIT_SAMPLES {
        return Err(IngestError::TooFewSamples(samples.len()));
    }
    let mut ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = DatasetSplit::sizes(ids.len());
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
        seed,
    })
}

/// Number of samples of each class in one part of a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub anomalous: usize,
}

impl ClassCounts {
    /// `total` samples with the anomalous share of `ref_anomalous : ref_normal`,
    /// rounded to the nearest sample.
    pub fn with_ratio(total: usize, ref_anomalous: usize, ref_normal: usize) -> Self {
        let share = ref_anomalous as f64 / (ref_anomalous + ref_normal) as f64;
        let anomalous = (total as f64 * share).round() as usize;
        Self {
            normal: total - anomalous,
            anomalous,
        }
    }
}

/// Draws disjoint train/validation/test parts with exact per-class sizes,
/// using a seeded shuffle of each class. Samples not drawn are left out.
pub fn stratified_subsample(
    samples: &[PayloadSample],
    parts: [ClassCounts; 3],
    seed: u64,
) -> Result<DatasetSplit, IngestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools = Vec::with_capacity(2);
    for label in [Label::Normal, Label::Anomalous] {
        let mut ids: Vec<u64> = samples.iter().filter(|s| s.label == label).map(|s| s.id).collect();
        let needed: usize = parts
            .iter()
            .map(|p| if label == Label::Normal { p.normal } else { p.anomalous })
            .sum();
        if ids.len() < needed {
            return Err(IngestError::NotEnoughOfClass {
                label,
                needed,
                available: ids.len(),
            });
        }
        ids.shuffle(&mut rng);
        pools.push(ids.into_iter());
    }
    let mut out: [Vec<u64>; 3] = Default::default();
    for (part, c) in out.iter_mut().zip(parts) {
        part.extend(pools[0].by_ref().take(c.normal));
        part.extend(pools[1].by_ref().take(c.anomalous));
        part.shuffle(&mut rng);
    }
    let [train, validation, test] = out;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
    })
}
