//! Seizure forecasting from scalp EEG.
//!
//! The pipeline reads EDF recordings and a CHB-MIT style summary, reduces the
//! montage to 16 channels, cuts 5 s epochs, bandpass filters, unmixes with
//! FastICA, labels each epoch by whether a seizure falls inside the window a
//! horizon ahead, and trains and evaluates five classifiers.

pub mod classifiers;
pub mod codec;
pub mod edf;
pub mod experiment;
pub mod filter;
pub mod ica;
pub mod manifest;
pub mod metrics;
pub mod segmentation;
pub mod synth;

use sha2::{Digest, Sha256};

/// First eight bytes (little-endian) of the SHA-256 digest.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
