//! The detector and its gradients.
//!
//! Data flow for one payload (the `full` variant):
//!
//! ```text
//! tokens ─▶ embedding (n × E) ─▶ LSTM ─▶ h_1..h_n ─▶ pick m equally spaced
//!        ─▶ m × H image ─▶ conv/ReLU/pool ×2 ─▶ flatten ─▶ MLP ─▶ softmax
//! ```
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks. Gradients are written
//! by hand; there is no tape.

mod adam;
mod checkpoint;
mod cnn;
mod config;
mod lstm;
mod mlp;
mod model;
mod params;
mod select;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use adam::{adam_update, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cnn::{cnn_forward, conv2d_same, max_pool, CnnTrace};
pub use config::{CnnGeometry, ModelConfig, Variant};
pub use lstm::{lstm_forward, lstm_step, LstmState, LstmTrace};
pub use mlp::{classify, dropout_mask, label_from_logits, softmax, Classification, ScoreDistribution};
pub(crate) use model::mix_seed;
pub use model::{embed, forward, forward_batch, loss_and_gradients, Prediction, Sample};
pub use params::{ConvParams, DenseParams, LstmParams, ModelParams, TENSOR_NAMES};
pub use select::{select_states, selected_indices};

/// Number of output classes (normal, anomalous).
pub const CLASSES: usize = 2;

/// Floating-point element type of the model.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("tensor {tensor} has shape {found:?}, expected {expected:?}")]
    Shape {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{what}: expected length {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("token id {token} exceeds vocabulary size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
