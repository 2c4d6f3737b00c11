//! Composition of the layers, the cross-entropy loss and the full backward
//! pass.

use ndarray::{s, Array1, Array2, ArrayView2};
use rayon::prelude::*;

use super::cnn::{cnn_backward, cnn_forward, CnnTrace};
use super::lstm::{lstm_backward, lstm_forward, LstmTrace};
use super::mlp::{mlp_backward, mlp_forward, Classification, MlpTrace};
use super::select::{select_states, select_states_backward};
use super::{ModelConfig, ModelError, ModelParams, Scalar, Variant};
use crate::blockfeat::{TokenId, PAD};
use crate::ingest::Label;

pub type Prediction<T> = Classification<T>;

/// A token sequence with its true label.
pub type Sample<'a> = (&'a [TokenId], Label);

/// Samples per gradient partial. Fixed so the reduction order, and thus the
/// result, does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

/// Looks up one embedding row per token.
pub fn embed<T: Scalar>(tokens: &[TokenId], embedding: &Array2<T>) -> Result<Array2<T>, ModelError> {
    let vocab = embedding.nrows() - 1;
    let mut out = Array2::zeros((tokens.len(), embedding.ncols()));
    for (mut row, &t) in out.outer_iter_mut().zip(tokens) {
        if t as usize > vocab {
            return Err(ModelError::TokenOutOfRange { token: t, vocab });
        }
        row.assign(&embedding.row(t as usize));
    }
    Ok(out)
}

// lives for one sample's forward/backward, so boxing would only add an allocation
#[allow(clippy::large_enum_variant)]
enum Extractor<T> {
    Full { lstm: LstmTrace<T>, cnn: CnnTrace<T> },
    LstmOnly { lstm: LstmTrace<T> },
    CnnOnly { cnn: CnnTrace<T> },
}

struct Trace<T> {
    tokens: Vec<TokenId>,
    inputs: Array2<T>,
    extractor: Extractor<T>,
    features: Array1<T>,
    mlp: MlpTrace<T>,
    out: Classification<T>,
}

fn forward_trace<T: Scalar>(
    tokens: &[TokenId],
    p: &ModelParams<T>,
    config: &ModelConfig,
    dropout: Option<(f64, u64)>,
) -> Result<Trace<T>, ModelError> {
    let tokens = if tokens.is_empty() { vec![PAD] } else { tokens.to_vec() };
    let inputs = embed(&tokens, &p.embedding)?;
    let m = config.chosen_states;
    let (features, extractor) = match config.variant {
        Variant::Full => {
            let lstm = lstm_forward(inputs.view(), &p.lstm);
            let selected = select_states(lstm.outputs(), m);
            let (f, cnn) = cnn_forward(selected.view(), &p.conv1, &p.conv2, config.pool_size);
            (f, Extractor::Full { lstm, cnn })
        }
        Variant::LstmOnly => {
            let lstm = lstm_forward(inputs.view(), &p.lstm);
            let selected = select_states(lstm.outputs(), m);
            let f = selected.into_shape_with_order(m * config.lstm_hidden).unwrap();
            (f, Extractor::LstmOnly { lstm })
        }
        Variant::CnnOnly => {
            let k = inputs.nrows().min(m);
            let mut image = Array2::zeros((m, config.embed_dim));
            image.slice_mut(s![..k, ..]).assign(&inputs.slice(s![..k, ..]));
            let (f, cnn) = cnn_forward(image.view(), &p.conv1, &p.conv2, config.pool_size);
            (f, Extractor::CnnOnly { cnn })
        }
    };
    let (out, mlp) = mlp_forward(features.view(), &p.mlp1, &p.mlp2, dropout)?;
    Ok(Trace {
        tokens,
        inputs,
        extractor,
        features,
        mlp,
        out,
    })
}

fn backward<T: Scalar>(
    trace: &Trace<T>,
    d_logits: [T; 2],
    p: &ModelParams<T>,
    config: &ModelConfig,
    g: &mut ModelParams<T>,
) {
    let d_features = mlp_backward(
        trace.features.view(),
        &trace.mlp,
        d_logits,
        &p.mlp1,
        &p.mlp2,
        &mut g.mlp1,
        &mut g.mlp2,
    );
    let n = trace.inputs.nrows();
    let m = config.chosen_states;
    let through_lstm = |d_sel: ArrayView2<T>, lstm: &LstmTrace<T>, g: &mut ModelParams<T>| {
        let d_h = select_states_backward(d_sel, n);
        lstm_backward(trace.inputs.view(), lstm, d_h.view(), &p.lstm, &mut g.lstm)
    };
    let d_inputs = match &trace.extractor {
        Extractor::Full { lstm, cnn } => {
            let d_sel = cnn_backward(d_features.view(), cnn, &p.conv1, &p.conv2, &mut g.conv1, &mut g.conv2);
            through_lstm(d_sel.view(), lstm, g)
        }
        Extractor::LstmOnly { lstm } => {
            let d_sel = d_features.into_shape_with_order((m, config.lstm_hidden)).unwrap();
            through_lstm(d_sel.view(), lstm, g)
        }
        Extractor::CnnOnly { cnn } => {
            let d_img = cnn_backward(d_features.view(), cnn, &p.conv1, &p.conv2, &mut g.conv1, &mut g.conv2);
            let k = n.min(m);
            let mut d = Array2::zeros((n, config.embed_dim));
            d.slice_mut(s![..k, ..]).assign(&d_img.slice(s![..k, ..]));
            d
        }
    };
    for (&t, row) in trace.tokens.iter().zip(d_inputs.outer_iter()) {
        if t != PAD {
            g.embedding.row_mut(t as usize).scaled_add(T::one(), &row);
        }
    }
}

fn validate<T: Scalar>(p: &ModelParams<T>, config: &ModelConfig) -> Result<(), ModelError> {
    config.validate()?;
    p.check(config)
}

/// Classifies one token sequence. An empty sequence is treated as `[PAD]`.
/// With `training` set, MLP dropout is drawn from `seed`.
pub fn forward<T: Scalar>(
    tokens: &[TokenId],
    params: &ModelParams<T>,
    config: &ModelConfig,
    training: bool,
    seed: u64,
) -> Result<Prediction<T>, ModelError> {
    validate(params, config)?;
    let dropout = training.then_some((config.dropout_rate, seed));
    forward_trace(tokens, params, config, dropout).map(|t| t.out)
}

/// Inference-mode [`forward`] over many sequences, in parallel, in order.
pub fn forward_batch<T: Scalar>(
    seqs: &[&[TokenId]],
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<Vec<Prediction<T>>, ModelError> {
    validate(params, config)?;
    seqs.par_iter()
        .map(|t| forward_trace(t, params, config, None).map(|tr| tr.out))
        .collect()
}

/// Per-sample dropout seed.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean cross-entropy `-ln s_label` over `batch` and its exact gradient
/// w.r.t. every parameter. Runs in training mode: MLP dropout masks are
/// drawn per sample from `seed` and the sample's batch position.
pub fn loss_and_gradients<T: Scalar>(
    batch: &[Sample<'_>],
    params: &ModelParams<T>,
    config: &ModelConfig,
    seed: u64,
) -> Result<(T, ModelParams<T>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    validate(params, config)?;
    let inv_b = T::one() / T::lit(batch.len() as f64);

    let partials = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| -> Result<(T, ModelParams<T>), ModelError> {
            let mut g = params.zeros_like();
            let mut loss = T::zero();
            for (k, (tokens, label)) in chunk.iter().enumerate() {
                let idx = (ci * GRAD_CHUNK + k) as u64;
                let dropout = Some((config.dropout_rate, mix_seed(seed, idx)));
                let tr = forward_trace(tokens, params, config, dropout)?;
                let z = tr.out.logits;
                let zmax = z[0].max(z[1]);
                let lse = zmax + ((z[0] - zmax).exp() + (z[1] - zmax).exp()).ln();
                let y = label.index();
                loss += lse - z[y];
                let s = tr.out.scores.s;
                let mut dz = [s[0] * inv_b, s[1] * inv_b];
                dz[y] -= inv_b;
                backward(&tr, dz, params, config, &mut g);
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.scaled_add(T::one(), &g);
    }
    grads.embedding.row_mut(0).fill(T::zero());
    let loss = loss * inv_b;
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            lstm_hidden: 5,
            chosen_states: 4,
            conv1_filters: 2,
            conv2_filters: 2,
            filter_size: (2, 2),
            pool_size: (2, 2),
            mlp_hidden: 6,
            dropout_rate: 0.1,
            variant,
        }
    }

    #[test]
    fn embed_lookup() {
        let p = ModelParams::<f64>::init(&tiny(Variant::Full), 5, 1);
        assert_eq!(embed(&[], &p.embedding).unwrap().nrows(), 0);
        let z = embed(&[0], &p.embedding).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        let e = embed(&[3, 3], &p.embedding).unwrap();
        assert_eq!(e.row(0), e.row(1));
        assert_eq!(e.row(0), p.embedding.row(3));
        assert!(matches!(
            embed(&[6], &p.embedding),
            Err(ModelError::TokenOutOfRange { token: 6, vocab: 5 })
        ));
    }

    #[test]
    fn zero_params_give_uniform_scores() {
        for v in Variant::ALL {
            let c = tiny(v);
            let p = ModelParams::<f64>::zeros(&c, 5);
            let out = forward(&[1, 2, 3], &p, &c, false, 0).unwrap();
            assert_eq!(out.scores.s, [0.5, 0.5]);
            assert_eq!(out.label, Label::Normal);
            let (loss, _) = loss_and_gradients(&[(&[1, 2][..], Label::Anomalous)], &p, &c, 0).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn inference_is_pure() {
        let c = tiny(Variant::Full);
        let p = ModelParams::<f32>::init(&c, 9, 3);
        let a = forward(&[4, 1, 9, 9, 2], &p, &c, false, 1).unwrap();
        let b = forward(&[4, 1, 9, 9, 2], &p, &c, false, 2).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn single_token_and_empty_sequences_run() {
        for v in Variant::ALL {
            let c = tiny(v);
            let p = ModelParams::<f64>::init(&c, 9, 3);
            forward(&[7], &p, &c, true, 1).unwrap();
            let empty = forward(&[], &p, &c, false, 1).unwrap();
            let pad = forward(&[PAD], &p, &c, false, 1).unwrap();
            assert_eq!(empty.logits, pad.logits);
        }
    }

    #[test]
    fn duplicated_sample_keeps_mean_loss() {
        let mut c = tiny(Variant::Full);
        c.dropout_rate = 0.0;
        let p = ModelParams::<f64>::init(&c, 9, 3);
        let s: Sample = (&[1, 5, 2, 8, 8, 3], Label::Anomalous);
        let (l1, g1) = loss_and_gradients(&[s], &p, &c, 0).unwrap();
        let (l2, g2) = loss_and_gradients(&[s, s], &p, &c, 0).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        let (a, b) = (g1.to_flat(), g2.to_flat());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn empty_batch_rejected() {
        let c = tiny(Variant::Full);
        let p = ModelParams::<f64>::zeros(&c, 3);
        assert!(matches!(
            loss_and_gradients(&[], &p, &c, 0),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn pad_row_gradient_is_zero() {
        let c = tiny(Variant::CnnOnly);
        let p = ModelParams::<f64>::init(&c, 4, 3);
        let (_, g) =
            loss_and_gradients(&[(&[][..], Label::Anomalous), (&[0, 1][..], Label::Normal)], &p, &c, 0).unwrap();
        assert!(g.embedding.row(0).iter().all(|&x| x == 0.0));
    }
}
