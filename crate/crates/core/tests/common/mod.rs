#![allow(dead_code)]

use payload_sentinel::blockfeat::BlockConfig;
use payload_sentinel::ingest::{Label, PayloadSample};
use payload_sentinel::nn::{ModelConfig, Variant};
use payload_sentinel::pipeline::TrainRunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normal payloads draw from `abcdefgh`, anomalous ones from `stuvwxyz`.
pub fn separable(n: usize, seed: u64) -> Vec<PayloadSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (label, alphabet) = if i % 2 == 0 {
                (Label::Normal, b"abcdefgh")
            } else {
                (Label::Anomalous, b"stuvwxyz")
            };
            let len = rng.random_range(5..30);
            let payload: Vec<u8> = (0..len).map(|_| alphabet[rng.random_range(0..8)]).collect();
            PayloadSample::new(i as u64, payload, label, "toy")
        })
        .collect()
}

pub fn small_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        lstm_hidden: 8,
        chosen_states: 8,
        conv1_filters: 4,
        conv2_filters: 4,
        filter_size: (3, 3),
        pool_size: (2, 2),
        mlp_hidden: 16,
        dropout_rate: 0.1,
        variant,
    }
}

pub fn toy_run(epochs: usize) -> TrainRunConfig {
    TrainRunConfig {
        epochs,
        batch_size: 8,
        lr: 5e-3,
        seed: 11,
        early_stop_patience: epochs,
        block: BlockConfig::raw_bytes(256),
        model: small_model(Variant::Full),
    }
}
