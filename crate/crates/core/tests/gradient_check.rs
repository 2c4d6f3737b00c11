//! Analytic gradients against central finite differences, in f64.

use payload_sentinel::ingest::Label;
use payload_sentinel::nn::{loss_and_gradients, ModelConfig, ModelParams, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Small enough that a step rarely crosses a ReLU or max-pool boundary, large
// enough that f64 round-off (~1e-11 here) stays far below the tolerance.
const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
// Below this magnitude both gradients count as zero.
const FLOOR: f64 = 1e-7;

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    loop {
        let c = ModelConfig {
            embed_dim: rng.random_range(1..=8),
            lstm_hidden: rng.random_range(1..=8),
            chosen_states: rng.random_range(1..=4),
            conv1_filters: rng.random_range(1..=2),
            conv2_filters: rng.random_range(1..=2),
            filter_size: (rng.random_range(1..=3), rng.random_range(1..=3)),
            pool_size: (rng.random_range(1..=2), rng.random_range(1..=2)),
            mlp_hidden: rng.random_range(1..=6),
            dropout_rate: if rng.random_bool(0.5) { 0.0 } else { 0.25 },
            variant: Variant::ALL[rng.random_range(0..3)],
        };
        if c.validate().is_ok() {
            return c;
        }
    }
}

/// Initialized parameters moved to a generic point. Fresh biases are exactly
/// zero, which puts zero-padded regions precisely on the ReLU hinge where the
/// loss is not differentiable and central differences disagree with any
/// one-sided derivative.
fn generic_params(config: &ModelConfig, vocab: usize, rng: &mut ChaCha8Rng) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(config, vocab, rng.random());
    for (_, mut t) in p.tensors_mut() {
        t.mapv_inplace(|x| x + rng.random_range(-0.2..0.2));
    }
    p.embedding.row_mut(0).fill(0.0);
    p
}

fn random_batch(rng: &mut ChaCha8Rng, vocab: u32) -> Vec<(Vec<u32>, Label)> {
    (0..rng.random_range(2..=4))
        .map(|i| {
            let len = rng.random_range(0..=10);
            let toks = (0..len).map(|_| rng.random_range(0..=vocab)).collect();
            let label = if i % 2 == 0 { Label::Normal } else { Label::Anomalous };
            (toks, label)
        })
        .collect()
}

/// Largest relative error over all parameters, with the tensor it occurred in.
fn max_relative_error(
    config: &ModelConfig,
    params: &ModelParams<f64>,
    batch: &[(Vec<u32>, Label)],
    seed: u64,
) -> (f64, &'static str) {
    let view: Vec<_> = batch.iter().map(|(t, l)| (t.as_slice(), *l)).collect();
    let loss = |p: &ModelParams<f64>| loss_and_gradients(&view, p, config, seed).unwrap().0;
    let (_, analytic) = loss_and_gradients(&view, params, config, seed).unwrap();

    let mut worst = (0.0, "");
    let mut probe = params.clone();
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let (name, len) = {
            let t = &params.tensors()[ti];
            (t.0, t.1.len())
        };
        for k in 0..len {
            let orig = params.tensors()[ti].1.iter().nth(k).copied().unwrap();
            let set = |p: &mut ModelParams<f64>, x: f64| {
                *p.tensors_mut()[ti].1.iter_mut().nth(k).unwrap() = x;
            };
            set(&mut probe, orig + EPS);
            let up = loss(&probe);
            set(&mut probe, orig - EPS);
            let down = loss(&probe);
            set(&mut probe, orig);
            let numeric = (up - down) / (2.0 * EPS);
            let a = *analytic.tensors()[ti].1.iter().nth(k).unwrap();
            // The PAD row is frozen, so its analytic gradient is zero by contract.
            if name == "embedding" && k < config.embed_dim {
                assert_eq!(a, 0.0);
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, name);
            }
        }
    }
    worst
}

#[test]
fn random_tiny_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = [false; 3];
    for case in 0..24 {
        let mut config = random_config(&mut rng);
        // make sure every variant is exercised
        while case >= 21 && config.variant != Variant::ALL[case - 21] {
            config = random_config(&mut rng);
        }
        seen[Variant::ALL.iter().position(|v| *v == config.variant).unwrap()] = true;
        let vocab = rng.random_range(1..=6);
        let params = generic_params(&config, vocab as usize, &mut rng);
        let batch = random_batch(&mut rng, vocab);
        let (err, tensor) = max_relative_error(&config, &params, &batch, case as u64);
        assert!(err < TOL, "case {case}: {config:?} max rel err {err:e} in {tensor}");
    }
    assert!(seen.iter().all(|&s| s));
}

#[test]
fn long_sequence_through_selection() {
    // n > m exercises the strided selection; n < m the zero padding.
    let config = ModelConfig {
        embed_dim: 3,
        lstm_hidden: 4,
        chosen_states: 4,
        conv1_filters: 2,
        conv2_filters: 2,
        filter_size: (3, 2),
        pool_size: (2, 2),
        mlp_hidden: 5,
        dropout_rate: 0.1,
        variant: Variant::Full,
    };
    let params = generic_params(&config, 4, &mut ChaCha8Rng::seed_from_u64(9));
    let batch = vec![
        ((0..17).map(|i| i % 5).collect(), Label::Anomalous),
        (vec![2, 3], Label::Normal),
        (vec![], Label::Anomalous),
    ];
    let (err, tensor) = max_relative_error(&config, &params, &batch, 3);
    assert!(err < TOL, "max rel err {err:e} in {tensor}");
}

#[test]
fn documented_tiny_configuration_at_coarse_step() {
    // embed 4, hidden 5, m = 3, one 2×2 filter per layer. Two 2×2 pools
    // would shrink a 3-row image to nothing, so pooling is 1×1 here.
    let config = ModelConfig {
        embed_dim: 4,
        lstm_hidden: 5,
        chosen_states: 3,
        conv1_filters: 1,
        conv2_filters: 1,
        filter_size: (2, 2),
        pool_size: (1, 1),
        mlp_hidden: 4,
        dropout_rate: 0.0,
        variant: Variant::Full,
    };
    let params = generic_params(&config, 5, &mut ChaCha8Rng::seed_from_u64(4));
    let batch = [(vec![1, 2, 3, 4, 5, 1], Label::Anomalous), (vec![5, 4], Label::Normal)];
    let view: Vec<_> = batch.iter().map(|(t, l)| (t.as_slice(), *l)).collect();
    let (_, analytic) = loss_and_gradients(&view, &params, &config, 0).unwrap();
    let mut probe = params.clone();
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for ti in 0..analytic.tensors().len() {
        for k in 0..analytic.tensors()[ti].1.len() {
            let orig = *probe.tensors()[ti].1.iter().nth(k).unwrap();
            *probe.tensors_mut()[ti].1.iter_mut().nth(k).unwrap() = orig + eps;
            let up = loss_and_gradients(&view, &probe, &config, 0).unwrap().0;
            *probe.tensors_mut()[ti].1.iter_mut().nth(k).unwrap() = orig - eps;
            let down = loss_and_gradients(&view, &probe, &config, 0).unwrap().0;
            *probe.tensors_mut()[ti].1.iter_mut().nth(k).unwrap() = orig;
            if ti == 0 && k < config.embed_dim {
                continue;
            }
            let n = (up - down) / (2.0 * eps);
            let a = *analytic.tensors()[ti].1.iter().nth(k).unwrap();
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(FLOOR));
        }
    }
    assert!(worst < TOL, "max rel err {worst:e}");
}

#[test]
fn zero_parameters_give_ln2() {
    let config = ModelConfig {
        embed_dim: 3,
        lstm_hidden: 4,
        chosen_states: 4,
        conv1_filters: 1,
        conv2_filters: 1,
        filter_size: (2, 2),
        pool_size: (2, 2),
        mlp_hidden: 3,
        dropout_rate: 0.0,
        variant: Variant::Full,
    };
    let p = ModelParams::<f64>::zeros(&config, 3);
    let (loss, _) = loss_and_gradients(&[(&[1, 2][..], Label::Anomalous)], &p, &config, 0).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    // a duplicated sample leaves the mean loss unchanged
    let b = [(&[1, 2][..], Label::Anomalous), (&[1, 2][..], Label::Anomalous)];
    assert_eq!(loss_and_gradients(&b, &p, &config, 0).unwrap().0, loss);
}
