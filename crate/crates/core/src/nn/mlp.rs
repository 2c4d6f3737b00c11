//! Two-layer MLP head, softmax and the label rule.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DenseParams, ModelError, Scalar};
use crate::ingest::Label;

/// Softmax output `(s0, s1)`: normal and anomalous scores summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDistribution<T> {
    pub s: [T; 2],
}

impl<T: Scalar> ScoreDistribution<T> {
    pub fn normal(&self) -> T {
        self.s[0]
    }

    pub fn anomalous(&self) -> T {
        self.s[1]
    }

    /// Argmax; a tie goes to normal.
    pub fn label(&self) -> Label {
        if self.s[1] > self.s[0] {
            Label::Anomalous
        } else {
            Label::Normal
        }
    }
}

/// Numerically stable two-way softmax.
pub fn softmax<T: Scalar>(z: [T; 2]) -> ScoreDistribution<T> {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let sum = e0 + e1;
    ScoreDistribution {
        s: [e0 / sum, e1 / sum],
    }
}

/// Argmax over logits, ties to normal. Agrees with
/// [`ScoreDistribution::label`] whenever the scores are distinguishable.
pub fn label_from_logits<T: Scalar>(z: [T; 2]) -> Label {
    if z[1] > z[0] {
        Label::Anomalous
    } else {
        Label::Normal
    }
}

/// Inverted-dropout multipliers for `len` units: 0 for dropped units,
/// `1 / (1 - rate)` for kept ones. `None` when nothing is dropped.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, seed: u64) -> Option<Array1<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Some(Array1::from_shape_fn(len, |_| {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification<T> {
    pub logits: [T; 2],
    pub scores: ScoreDistribution<T>,
    pub label: Label,
}

/// Cached activations of the head for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct MlpTrace<T> {
    /// ReLU output before dropout.
    hidden: Array1<T>,
    mask: Option<Array1<T>>,
    /// Input of the second layer (after dropout).
    dropped: Array1<T>,
}

pub(crate) fn mlp_forward<T: Scalar>(
    features: ArrayView1<T>,
    l1: &DenseParams<T>,
    l2: &DenseParams<T>,
    dropout: Option<(f64, u64)>,
) -> Result<(Classification<T>, MlpTrace<T>), ModelError> {
    if features.len() != l1.weight.ncols() {
        return Err(ModelError::Dimension {
            what: "mlp input",
            expected: l1.weight.ncols(),
            found: features.len(),
        });
    }
    let mut hidden = l1.weight.dot(&features) + &l1.bias;
    hidden.mapv_inplace(|x| if x > T::zero() { x } else { T::zero() });
    let mask = dropout.and_then(|(rate, seed)| dropout_mask::<T>(hidden.len(), rate, seed));
    let dropped = match &mask {
        Some(m) => &hidden * m,
        None => hidden.clone(),
    };
    let z = l2.weight.dot(&dropped) + &l2.bias;
    let logits = [z[0], z[1]];
    let scores = softmax(logits);
    let out = Classification {
        logits,
        scores,
        label: label_from_logits(logits),
    };
    Ok((out, MlpTrace { hidden, mask, dropped }))
}

/// Returns the gradient w.r.t. the features given `d_logits`.
pub(crate) fn mlp_backward<T: Scalar>(
    features: ArrayView1<T>,
    trace: &MlpTrace<T>,
    d_logits: [T; 2],
    l1: &DenseParams<T>,
    l2: &DenseParams<T>,
    g1: &mut DenseParams<T>,
    g2: &mut DenseParams<T>,
) -> Array1<T> {
    let dz = Array1::from(d_logits.to_vec());
    for (k, &d) in dz.iter().enumerate() {
        g2.weight.row_mut(k).scaled_add(d, &trace.dropped);
    }
    g2.bias += &dz;
    let mut d_hidden = l2.weight.t().dot(&dz);
    if let Some(m) = &trace.mask {
        d_hidden *= m;
    }
    d_hidden.zip_mut_with(&trace.hidden, |d, &h| {
        if h <= T::zero() {
            *d = T::zero()
        }
    });
    for (j, &d) in d_hidden.iter().enumerate() {
        if d != T::zero() {
            g1.weight.row_mut(j).scaled_add(d, &features);
        }
    }
    g1.bias += &d_hidden;
    l1.weight.t().dot(&d_hidden)
}

/// Runs the head on `features`. Dropout is applied only when `training`.
pub fn classify<T: Scalar>(
    features: ArrayView1<T>,
    l1: &DenseParams<T>,
    l2: &DenseParams<T>,
    dropout_rate: f64,
    training: bool,
    dropout_seed: u64,
) -> Result<Classification<T>, ModelError> {
    let dropout = training.then_some((dropout_rate, dropout_seed));
    mlp_forward(features, l1, l2, dropout).map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn uniform_on_equal_logits() {
        let s = softmax([0.0f64, 0.0]);
        assert_eq!(s.s, [0.5, 0.5]);
        assert_eq!(s.label(), Label::Normal);
    }

    #[test]
    fn larger_anomalous_logit_wins() {
        let s = softmax([1.0f64, 3.0]);
        assert!(s.anomalous() > s.normal());
        assert_eq!(s.label(), Label::Anomalous);
    }

    #[test]
    fn zero_rate_dropout_is_identity() {
        let l1 = DenseParams {
            weight: Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3),
            bias: array![0.1, -0.2, 0.3, 0.0],
        };
        let l2 = DenseParams {
            weight: Array2::from_shape_fn((2, 4), |(i, j)| (i + j) as f64 * 0.1 - 0.2),
            bias: array![0.0, 0.05],
        };
        let x = array![1.0, -0.5, 2.0];
        let a = classify(x.view(), &l1, &l2, 0.0, true, 7).unwrap();
        let b = classify(x.view(), &l1, &l2, 0.0, false, 7).unwrap();
        assert_eq!(a.logits, b.logits);
        let c = classify(x.view(), &l1, &l2, 0.5, true, 7).unwrap();
        let d = classify(x.view(), &l1, &l2, 0.5, true, 7).unwrap();
        assert_eq!(c.logits, d.logits);
    }

    #[test]
    fn dropout_mask_rate() {
        let m = dropout_mask::<f64>(10_000, 0.1, 3).unwrap();
        let dropped = m.iter().filter(|&&x| x == 0.0).count();
        assert!((800..1200).contains(&dropped), "{dropped}");
        assert!(m.iter().all(|&x| x == 0.0 || (x - 1.0 / 0.9).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn softmax_normalised_and_argmax_consistent(z0 in -700.0f64..700.0, z1 in -700.0f64..700.0) {
            let s = softmax([z0, z1]);
            prop_assert!((s.s[0] + s.s[1] - 1.0).abs() <= 1e-12);
            prop_assert!(s.s.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!(s.s[1] <= s.s[0] || z1 > z0);
            prop_assert!(s.s[1] >= s.s[0] || z1 < z0);
            if s.s[0] != s.s[1] {
                prop_assert_eq!(s.label(), label_from_logits([z0, z1]));
            }
        }
    }
}
