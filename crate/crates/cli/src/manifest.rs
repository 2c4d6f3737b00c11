//! Run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use payload_sentinel::pipeline::TrainRunConfig;
use payload_sentinel::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        }
    }
}

/// Everything needed to rerun a command: the resolved configuration, the
/// digests of the inputs it read and the artifacts it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: TrainRunConfig,
    /// Command-specific settings (format, axis, perturb mode, ...).
    #[serde(default)]
    pub options: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub dictionary_fingerprint: Option<String>,
    /// Artifact role → path.
    #[serde(default)]
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: TrainRunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            config,
            options: BTreeMap::new(),
            inputs: Vec::new(),
            dictionary_fingerprint: None,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        crate::write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = crate::read_file(path)?;
        serde_json::from_slice(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Fails if an input no longer has its recorded digest.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let bytes = crate::read_file(&input.path)?;
            let now = sha256_hex(&bytes);
            if now != input.sha256 {
                return Err(CliError::Data(format!(
                    "{} changed since the manifest was written (sha256 {now}, expected {})",
                    input.path.display(),
                    input.sha256
                )));
            }
        }
        Ok(())
    }
}
