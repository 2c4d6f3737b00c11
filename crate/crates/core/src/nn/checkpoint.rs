//! Binary checkpoint.
//!
//! ```text
//! magic    8 bytes  "PSNTCKPT"
//! version  u32 LE
//! header   u32 LE length + UTF-8 JSON {"model": ModelConfig, "dictionary_fingerprint": hex}
//! count    u32 LE number of tensors
//! tensor   u32 LE name length, name, u32 LE rank, rank × u64 LE dims,
//!          then product(dims) × f32 LE values in row-major order
//! ```
//!
//! Tensors appear in [`TENSOR_NAMES`](super::TENSOR_NAMES) order.

use std::io::{Read, Write};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams, TENSOR_NAMES};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"PSNTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Fingerprint of the block dictionary the embedding rows refer to.
    pub dictionary_fingerprint: String,
    pub params: ModelParams<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    dictionary_fingerprint: String,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let header = serde_json::to_vec(&Header {
            model: self.model,
            dictionary_fingerprint: self.dictionary_fingerprint.clone(),
        })
        .map_err(|e| bad(e.to_string()))?;
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let tensors = self.params.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        let mut buf = Vec::new();
        for (name, t) in tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            buf.clear();
            buf.reserve(t.len() * 4);
            for x in t.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
        header.model.validate()?;

        let count = read_u32(&mut r)? as usize;
        if count != TENSOR_NAMES.len() {
            return Err(bad(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for expected in TENSOR_NAMES {
            let nlen = read_u32(&mut r)? as usize;
            if nlen > 256 {
                return Err(bad("tensor name too long"));
            }
            let mut name = vec![0u8; nlen];
            r.read_exact(&mut name)?;
            if name != expected.as_bytes() {
                return Err(bad(format!(
                    "expected tensor {expected}, found {}",
                    String::from_utf8_lossy(&name)
                )));
            }
            let rank = read_u32(&mut r)? as usize;
            if rank > 4 {
                return Err(bad(format!("{expected}: rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| bad(format!("{expected}: absurd shape {dims:?}")))?;
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| bad(e.to_string()))?);
        }
        let params = ModelParams::from_tensors(&header.model, tensors)?;
        Ok(Self {
            model: header.model,
            dictionary_fingerprint: header.dictionary_fingerprint,
            params,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        crate::sha256_hex(&self.to_bytes())
    }
}
