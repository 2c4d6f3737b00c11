//! Declarative `key = value` config files layered under command-line flags.
//!
//! Keys are the long flag names without the leading dashes (`block-length`,
//! `lr`, ...); underscores are accepted in place of dashes. Blank lines and
//! lines starting with `#` are ignored. A flag given on the command line
//! always wins over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            let key = normalize(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key {key:?}", i + 1)));
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// `flag` if set, else the parsed file value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    /// Boolean switches: set on the command line, or `true`/`false` in the file.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, flag: Vec<T>, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if !flag.is_empty() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|e| CliError::Usage(format!("config {key}: {s:?}: {e}")))
                })
                .collect(),
        }
    }
}

pub const KNOWN_KEYS: &[&str] = &[
    "input",
    "anomalous",
    "format",
    "label",
    "strip-headers",
    "out-dir",
    "model-dir",
    "split",
    "seed",
    "seeds",
    "block-length",
    "stride",
    "dict-size",
    "chosen-states",
    "variant",
    "epochs",
    "batch-size",
    "lr",
    "patience",
    "embed-dim",
    "lstm-hidden",
    "conv1-filters",
    "conv2-filters",
    "filter-size",
    "pool-size",
    "mlp-hidden",
    "dropout",
    "axis",
    "values",
    "perturb-mode",
];

/// `RxC` or a single `N` meaning `NxN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair(pub usize, pub usize);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
        match s.split_once(['x', 'X']) {
            Some((a, b)) => Ok(Pair(num(a)?, num(b)?)),
            None => {
                let n = num(s)?;
                Ok(Pair(n, n))
            }
        }
    }
}
