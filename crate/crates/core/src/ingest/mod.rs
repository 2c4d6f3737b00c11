//! Dataset ingestion: raw files in, labeled payload byte streams out.
//!
//! Every parser yields [`PayloadSample`]s. The labeled-lines format
//! ([`parse_labeled_lines`] / [`serialize_labeled_lines`]) is the canonical
//! interchange format consumed by the rest of the toolkit.

mod csic;
mod lines;
mod pcap;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csic::parse_http_text;
pub use lines::{parse_labeled_lines, serialize_labeled_lines};
pub use pcap::{extract_pcap_payloads, fixture as pcap_fixture, PcapExtraction, PcapSkips};
pub use split::{split_dataset, stratified_subsample, ClassCounts, DatasetSplit, MIN_SPLIT_SAMPLES};

/// Binary class of a payload. Anomalous is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Normal = 0,
    Anomalous = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = u8;

    fn try_from(v: u8) -> Result<Self, u8> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            other => Err(other),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    /// Accepts `0`/`normal` and `1`/`anomalous`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "0" | "normal" => Ok(Label::Normal),
            "1" | "anomalous" => Ok(Label::Anomalous),
            _ => Err(format!("unknown label {s:?} (expected normal or anomalous)")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// One labeled payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadSample {
    pub id: u64,
    pub payload: Vec<u8>,
    pub label: Label,
    /// Free-text dataset tag.
    pub source: String,
}

impl PayloadSample {
    pub fn new(id: u64, payload: impl Into<Vec<u8>>, label: Label, source: impl Into<String>) -> Self {
        Self {
            id,
            payload: payload.into(),
            label,
            source: source.into(),
        }
    }
}

/// Reassigns ids `0..n` in list order, e.g. after concatenating files.
pub fn renumber(samples: &mut [PayloadSample]) {
    for (i, s) in samples.iter_mut().enumerate() {
        s.id = i as u64;
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed HTTP record at byte offset {offset}: {reason}")]
    MalformedRecord { offset: usize, reason: &'static str },
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("not a classic pcap capture (magic {0:#010x})")]
    BadMagic(u32),
    #[error("pcap global header truncated ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("pcap record {index} truncated at byte offset {offset}")]
    TruncatedRecord { index: usize, offset: usize },
    #[error("dataset has {0} samples; at least {min} are needed to split", min = MIN_SPLIT_SAMPLES)]
    TooFewSamples(usize),
    #[error("need {needed} samples labelled {label}, have {available}")]
    NotEnoughOfClass {
        label: Label,
        needed: usize,
        available: usize,
    },
}
