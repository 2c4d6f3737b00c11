use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which feature extractor sits between the embedding and the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// LSTM, state selection, then CNN.
    Full,
    /// LSTM and state selection; the selected states go straight to the MLP.
    LstmOnly,
    /// No LSTM; the first `m` embedded vectors form the CNN input.
    CnnOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::LstmOnly, Variant::CnnOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LstmOnly => "lstm_only",
            Variant::CnnOnly => "cnn_only",
        }
    }

    pub fn uses_lstm(self) -> bool {
        self != Variant::CnnOnly
    }

    pub fn uses_cnn(self) -> bool {
        self != Variant::LstmOnly
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Variant::Full),
            "lstm_only" => Ok(Variant::LstmOnly),
            "cnn_only" => Ok(Variant::CnnOnly),
            other => Err(format!(
                "unknown variant {other:?} (expected full, lstm_only or cnn_only)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    /// Number of hidden states kept for the CNN (`m`).
    pub chosen_states: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    /// (rows, cols)
    pub filter_size: (usize, usize),
    /// (rows, cols); stride equals the window.
    pub pool_size: (usize, usize),
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            lstm_hidden: 128,
            chosen_states: 50,
            conv1_filters: 32,
            conv2_filters: 64,
            filter_size: (4, 4),
            pool_size: (2, 2),
            mlp_hidden: 128,
            dropout_rate: 0.1,
            variant: Variant::Full,
        }
    }
}

/// Shapes along the convolutional path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnGeometry {
    pub input: (usize, usize),
    pub after_pool1: (usize, usize),
    pub after_pool2: (usize, usize),
    pub features: usize,
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("chosen_states", self.chosen_states),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("filter rows", self.filter_size.0),
            ("filter cols", self.filter_size.1),
            ("pool rows", self.pool_size.0),
            ("pool cols", self.pool_size.1),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if let Some(g) = self.cnn_geometry() {
            if g.features == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "{}×{} CNN input vanishes after two {}×{} poolings",
                    g.input.0, g.input.1, self.pool_size.0, self.pool_size.1
                )));
            }
        }
        Ok(())
    }

    /// `None` for the LSTM-only variant.
    pub fn cnn_geometry(&self) -> Option<CnnGeometry> {
        let cols = match self.variant {
            Variant::Full => self.lstm_hidden,
            Variant::CnnOnly => self.embed_dim,
            Variant::LstmOnly => return None,
        };
        let input = (self.chosen_states, cols);
        let (pr, pc) = self.pool_size;
        let after_pool1 = (input.0 / pr, input.1 / pc);
        let after_pool2 = (after_pool1.0 / pr, after_pool1.1 / pc);
        Some(CnnGeometry {
            input,
            after_pool1,
            after_pool2,
            features: after_pool2.0 * after_pool2.1 * self.conv2_filters,
        })
    }

    /// Length of the vector fed to the first MLP layer.
    pub fn feature_len(&self) -> usize {
        match self.cnn_geometry() {
            Some(g) => g.features,
            None => self.chosen_states * self.lstm_hidden,
        }
    }
}
