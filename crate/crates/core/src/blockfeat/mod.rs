//! Sliding-block tokenization.
//!
//! A block of `block_length` bytes slides over the payload with a fixed
//! `stride`. Blocks are raw byte strings over the full 256-symbol alphabet.
//! A [`BlockDictionary`] fitted on the training corpus keeps the `dict_size`
//! most frequent blocks; [`tokenize`] drops every other block and maps the
//! survivors, in their original order, to dense ids starting at 1. Id 0 is
//! reserved for padding.

mod dictionary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dictionary::{fit_dictionary, fit_dictionary_from_payloads, BlockDictionary};

/// Token id. `PAD` (0) never names a block.
pub type TokenId = u32;
pub const PAD: TokenId = 0;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{field} must be at least 1")]
    NonPositive { field: &'static str },
    #[error("corpus produced no blocks of length {0}; the dictionary would be empty")]
    EmptyDictionary(usize),
    #[error("dictionary file, line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("dictionary fingerprint mismatch: header says {stored}, entries hash to {computed}")]
    Fingerprint { stored: String, computed: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Block length L, stride S and dictionary capacity K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockConfig {
    pub block_length: usize,
    pub stride: usize,
    pub dict_size: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            block_length: 3,
            stride: 1,
            dict_size: 15_000,
        }
    }
}

impl BlockConfig {
    pub fn new(block_length: usize, stride: usize, dict_size: usize) -> Result<Self, FeatureError> {
        let c = Self {
            block_length,
            stride,
            dict_size,
        };
        c.validate()?;
        Ok(c)
    }

    /// Single-byte tokenization, i.e. the raw byte stream.
    pub fn raw_bytes(dict_size: usize) -> Self {
        Self {
            block_length: 1,
            stride: 1,
            dict_size,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        for (field, v) in [
            ("block_length", self.block_length),
            ("stride", self.stride),
            ("dict_size", self.dict_size),
        ] {
            if v == 0 {
                return Err(FeatureError::NonPositive { field });
            }
        }
        Ok(())
    }

    /// Number of windows over a payload of `len` bytes.
    pub fn block_count(&self, len: usize) -> usize {
        if len < self.block_length {
            0
        } else {
            (len - self.block_length) / self.stride + 1
        }
    }
}

/// Windows `payload[i..i+L]` for `i = 0, S, 2S, …` while `i + L <= len`.
pub fn extract_blocks<'a>(payload: &'a [u8], config: &BlockConfig) -> impl ExactSizeIterator<Item = &'a [u8]> + 'a {
    let (l, s) = (config.block_length, config.stride);
    let n = config.block_count(payload.len());
    (0..n).map(move |k| &payload[k * s..k * s + l])
}

/// Dictionary-filtered token ids of one payload.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    /// Id of the sample the tokens came from.
    pub origin: u64,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Maps in-dictionary blocks to ids in payload order, dropping the rest.
pub fn tokenize(payload: &[u8], dict: &BlockDictionary) -> Vec<TokenId> {
    extract_blocks(payload, dict.config())
        .filter_map(|b| dict.token(b))
        .collect()
}

/// [`tokenize`] wrapped with the sample id.
pub fn tokenize_sample(sample: &crate::ingest::PayloadSample, dict: &BlockDictionary) -> TokenSequence {
    TokenSequence {
        tokens: tokenize(&sample.payload, dict),
        origin: sample.id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(l: usize, s: usize) -> BlockConfig {
        BlockConfig::new(l, s, 100).unwrap()
    }

    fn blocks(p: &[u8], l: usize, s: usize) -> Vec<Vec<u8>> {
        extract_blocks(p, &cfg(l, s)).map(|b| b.to_vec()).collect()
    }

    #[test]
    fn defaults() {
        let d = BlockConfig::default();
        assert_eq!((d.block_length, d.stride, d.dict_size), (3, 1, 15000));
    }

    #[test]
    fn rejects_zero() {
        assert!(BlockConfig::new(0, 1, 1).is_err());
        assert!(BlockConfig::new(1, 0, 1).is_err());
        assert!(BlockConfig::new(1, 1, 0).is_err());
    }

    #[test]
    fn sliding_examples() {
        assert_eq!(blocks(b"kaef", 2, 1), [b"ka", b"ae", b"ef"]);
        assert!(blocks(b"ab", 3, 1).is_empty());
        assert_eq!(blocks(b"abcdef", 3, 2), [b"abc", b"cde"]);
        assert!(blocks(b"", 1, 1).is_empty());
    }

    #[test]
    fn tokenize_examples() {
        let dict = fit_dictionary_from_payloads([&b"aaab"[..]], BlockConfig::new(2, 1, 2).unwrap()).unwrap();
        assert_eq!(tokenize(b"aaab", &dict), [1, 1, 2]);
        assert!(tokenize(b"zzzz", &dict).is_empty());
        assert_eq!(tokenize(b"ab", &dict), [2]);
    }

    proptest! {
        #[test]
        fn window_count_and_substring_laws(p in prop::collection::vec(any::<u8>(), 0..120), l in 1usize..7, s in 1usize..5) {
            let c = cfg(l, s);
            let got: Vec<&[u8]> = extract_blocks(&p, &c).collect();
            let expected = if p.len() >= l { (p.len() - l) / s + 1 } else { 0 };
            prop_assert_eq!(got.len(), expected);
            for (k, b) in got.iter().enumerate() {
                prop_assert_eq!(*b, &p[k * s..k * s + l]);
            }
        }

        #[test]
        fn tokens_follow_increasing_offsets(
            corpus in prop::collection::vec(prop::collection::vec(0u8..4, 0..40), 1..10),
            probe in prop::collection::vec(0u8..4, 0..60),
            l in 1usize..4, s in 1usize..3, k in 1usize..12,
        ) {
            let c = BlockConfig::new(l, s, k).unwrap();
            let Ok(dict) = fit_dictionary_from_payloads(corpus.iter().map(|v| v.as_slice()), c) else {
                return Ok(());
            };
            // recover the offsets that produced each token
            let offsets: Vec<usize> = (0..c.block_count(probe.len()))
                .map(|i| i * s)
                .filter(|&o| dict.token(&probe[o..o + l]).is_some())
                .collect();
            let toks = tokenize(&probe, &dict);
            prop_assert_eq!(toks.len(), offsets.len());
            prop_assert!(offsets.windows(2).all(|w| w[0] < w[1]));
            for (t, o) in toks.iter().zip(&offsets) {
                prop_assert_eq!(dict.block(*t).unwrap(), &probe[*o..*o + l]);
            }
        }
    }
}
