//! Payload anomaly detection built on block-based features.
//!
//! The crate is split along the data path:
//!
//! - [`ingest`] turns raw dataset files (CSIC-style HTTP text, labeled-lines,
//!   classic PCAP) into labeled payload byte streams and reproducible splits.
//! - [`blockfeat`] slides a fixed-length block over each payload, keeps the
//!   top-K most frequent blocks of the training corpus, and rewrites every
//!   payload as the ordered sequence of surviving block ids.
//! - [`nn`] is the detector: a learned block embedding, an LSTM over the
//!   block sequence, equally spaced hidden-state selection, a two-layer CNN,
//!   and a two-layer MLP with softmax, together with exact hand-written
//!   gradients and an Adam optimizer.
//! - [`pipeline`] trains, evaluates, perturbs and runs experiment grids.
//!
//! ```
//! use payload_sentinel::blockfeat::{extract_blocks, BlockConfig};
//!
//! let cfg = BlockConfig::new(2, 1, 10).unwrap();
//! let blocks: Vec<&[u8]> = extract_blocks(b"kaef", &cfg).collect();
//! assert_eq!(blocks, [&b"ka"[..], b"ae", b"ef"]);
//! ```

pub mod blockfeat;
pub mod ingest;
pub mod nn;
pub mod pipeline;

pub(crate) mod digest {
    use sha2::{Digest, Sha256};

    /// Hex SHA-256 of `bytes`.
    pub fn sha256_hex(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    /// Incremental hasher over length-prefixed chunks.
    #[derive(Default)]
    pub struct ChunkHasher(Sha256);

    impl ChunkHasher {
        pub fn chunk(&mut self, bytes: &[u8]) {
            self.0.update((bytes.len() as u64).to_le_bytes());
            self.0.update(bytes);
        }

        pub fn finish(self) -> String {
            hex::encode(self.0.finalize())
        }
    }
}

pub use digest::sha256_hex;
