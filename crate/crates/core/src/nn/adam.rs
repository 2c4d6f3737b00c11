//! Adam with bias correction.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of a single tensor at 1-based `step`.
pub fn adam_update<T: Scalar>(
    mut param: ArrayViewMutD<T>,
    grad: ArrayViewD<T>,
    m: &mut ArrayD<T>,
    v: &mut ArrayD<T>,
    step: u64,
    cfg: &AdamConfig,
    lr: T,
) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let eps = T::lit(cfg.epsilon);
    let c1 = T::lit(1.0 - cfg.beta1.powf(step as f64));
    let c2 = T::lit(1.0 - cfg.beta2.powf(step as f64));
    let one = T::one();
    Zip::from(&mut param).and(&grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

/// Optimizer state for a whole [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        let zeros: Vec<ArrayD<T>> = params
            .tensors()
            .iter()
            .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates, in tensor order.
    pub fn moments(&self) -> (&[ArrayD<T>], &[ArrayD<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update and re-zeroes the PAD embedding row.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>, lr: T) -> Result<(), ModelError> {
        let grads = grads.tensors();
        let mut params_t = params.tensors_mut();
        if grads.len() != params_t.len() {
            return Err(ModelError::Checkpoint("gradient set does not match parameters".into()));
        }
        for ((name, p), (_, g)) in params_t.iter().zip(&grads) {
            if p.shape() != g.shape() {
                return Err(ModelError::Shape {
                    tensor: (*name).into(),
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        for (i, ((_, p), (_, g))) in params_t.iter_mut().zip(grads).enumerate() {
            adam_update(
                p.view_mut(),
                g,
                &mut self.m[i],
                &mut self.v[i],
                self.step,
                &self.config,
                lr,
            );
        }
        drop(params_t);
        params.embedding.row_mut(0).fill(T::zero());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ModelConfig, Variant};
    use ndarray::{arr0, IxDyn};

    #[test]
    fn first_step_moves_by_lr() {
        // t = 1: m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
        let cfg = AdamConfig::default();
        let mut p = arr0(0.5f64).into_dyn();
        let g = arr0(1.0f64).into_dyn();
        let mut m = ArrayD::zeros(IxDyn(&[]));
        let mut v = ArrayD::zeros(IxDyn(&[]));
        adam_update(p.view_mut(), g.view(), &mut m, &mut v, 1, &cfg, 1e-4);
        let expected = 0.5 - 1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p[[]] - expected).abs() < 1e-18);
        assert!((m[[]] - 0.1).abs() < 1e-15);
        assert!((v[[]] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let c = ModelConfig {
            embed_dim: 2,
            lstm_hidden: 2,
            chosen_states: 4,
            conv1_filters: 1,
            conv2_filters: 1,
            filter_size: (2, 2),
            pool_size: (2, 2),
            mlp_hidden: 3,
            dropout_rate: 0.0,
            variant: Variant::Full,
        };
        let mut p = crate::nn::ModelParams::<f64>::init(&c, 3, 5);
        let before = p.clone();
        let zero = p.zeros_like();
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &zero, 1e-3).unwrap();
        opt.step(&mut p, &zero, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 2);
        assert!(opt.moments().0.iter().all(|m| m.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn moments_decay_geometrically() {
        let cfg = AdamConfig::default();
        let mut p = arr0(0.0f64).into_dyn();
        let mut m = ArrayD::zeros(IxDyn(&[]));
        let mut v = ArrayD::zeros(IxDyn(&[]));
        adam_update(p.view_mut(), arr0(2.0).into_dyn().view(), &mut m, &mut v, 1, &cfg, 0.1);
        let (m1, v1) = (m[[]], v[[]]);
        adam_update(p.view_mut(), arr0(0.0).into_dyn().view(), &mut m, &mut v, 2, &cfg, 0.1);
        assert!((m[[]] - 0.9 * m1).abs() < 1e-15);
        assert!((v[[]] - 0.999 * v1).abs() < 1e-15);
    }
}
