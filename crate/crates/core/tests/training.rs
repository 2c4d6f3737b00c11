mod common;

use common::{separable, small_model, toy_run};
use payload_sentinel::blockfeat::{fit_dictionary, tokenize};
use payload_sentinel::ingest::{split_dataset, PayloadSample};
use payload_sentinel::nn::Variant;
use payload_sentinel::pipeline::{evaluate, fit_and_evaluate, train, PipelineError, TrainRunConfig};

fn members(samples: &[PayloadSample], ids: &[u64]) -> Vec<PayloadSample> {
    ids.iter().map(|&id| samples[id as usize].clone()).collect()
}

#[test]
fn one_epoch_gives_one_log_entry() {
    let samples = separable(20, 1);
    let split = split_dataset(&samples, 1).unwrap();
    let dict = fit_dictionary(&members(&samples, &split.train), toy_run(1).block).unwrap();
    let out = train(&samples, &split, &dict, &toy_run(1), |_| {}).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.best_epoch, 1);
    assert_eq!(out.checkpoint.dictionary_fingerprint, dict.fingerprint());
}

#[test]
fn identical_seeds_give_identical_logs() {
    let samples = separable(40, 2);
    let split = split_dataset(&samples, 2).unwrap();
    let dict = fit_dictionary(&members(&samples, &split.train), toy_run(3).block).unwrap();
    let a = train(&samples, &split, &dict, &toy_run(3), |_| {}).unwrap();
    let b = train(&samples, &split, &dict, &toy_run(3), |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
}

#[test]
fn separable_data_is_fit_perfectly() {
    for variant in Variant::ALL {
        let samples = separable(60, 3);
        let mut split = split_dataset(&samples, 3).unwrap();
        // select on the training set itself so the kept checkpoint is the
        // one with the best training fit
        split.validation = split.train.clone();
        let cfg = TrainRunConfig {
            model: small_model(variant),
            ..toy_run(30)
        };
        let train_samples = members(&samples, &split.train);
        let dict = fit_dictionary(&train_samples, cfg.block).unwrap();
        let mut streamed = Vec::new();
        let out = train(&samples, &split, &dict, &cfg, |r| streamed.push(r.clone())).unwrap();
        assert_eq!(streamed, out.log);
        let acc = evaluate(&out.checkpoint, &dict, &train_samples).unwrap().accuracy;
        assert_eq!(acc, 1.0, "{variant:?} training accuracy {acc}");
    }
}

#[test]
fn kept_checkpoint_is_never_worse_than_a_logged_epoch() {
    let samples = separable(50, 4);
    let split = split_dataset(&samples, 4).unwrap();
    let cfg = TrainRunConfig {
        early_stop_patience: 2,
        ..toy_run(12)
    };
    let dict = fit_dictionary(&members(&samples, &split.train), cfg.block).unwrap();
    let out = train(&samples, &split, &dict, &cfg, |_| {}).unwrap();
    let val = members(&samples, &split.validation);
    let kept = evaluate(&out.checkpoint, &dict, &val).unwrap().f1;
    for r in &out.log {
        assert!(kept >= r.validation.f1);
    }
    assert_eq!(kept, out.log[out.best_epoch - 1].validation.f1);
    if out.stopped_early {
        assert_eq!(out.log.len() - out.best_epoch, 2);
    }
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let samples = separable(30, 5);
    let split = split_dataset(&samples, 5).unwrap();
    let cfg = TrainRunConfig { lr: 1e38, ..toy_run(5) };
    let dict = fit_dictionary(&members(&samples, &split.train), cfg.block).unwrap();
    match train(&samples, &split, &dict, &cfg, |_| {}) {
        Err(PipelineError::Diverged { last_good, .. }) => assert!(last_good.params.all_finite()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn evaluate_refuses_a_foreign_dictionary() {
    let samples = separable(20, 6);
    let split = split_dataset(&samples, 6).unwrap();
    let run = fit_and_evaluate(&samples, &split, &toy_run(1)).unwrap();
    let other = fit_dictionary(&samples[..3], toy_run(1).block).unwrap();
    assert!(matches!(
        evaluate(&run.outcome.checkpoint, &other, &samples),
        Err(PipelineError::FingerprintMismatch { .. })
    ));
    assert!(matches!(
        evaluate(&run.outcome.checkpoint, &run.dictionary, &[]),
        Err(PipelineError::NoSamples)
    ));
}

#[test]
fn evaluate_ignores_sample_order() {
    let samples = separable(40, 7);
    let split = split_dataset(&samples, 7).unwrap();
    let run = fit_and_evaluate(&samples, &split, &toy_run(2)).unwrap();
    let mut shuffled = samples.clone();
    shuffled.reverse();
    shuffled.rotate_left(13);
    let ck = &run.outcome.checkpoint;
    assert_eq!(
        evaluate(ck, &run.dictionary, &samples).unwrap(),
        evaluate(ck, &run.dictionary, &shuffled).unwrap()
    );
}

#[test]
fn raw_mode_keeps_one_token_per_byte() {
    let samples = separable(20, 8);
    let dict = fit_dictionary(&samples, toy_run(1).block).unwrap();
    for s in &samples {
        assert_eq!(tokenize(&s.payload, &dict).len(), s.payload.len());
    }
}
