//! Random-stream derivation.
//!
//! Every stochastic component draws from a ChaCha8 stream. Streams are
//! derived from a master seed, a purpose tag, and an index:
//!
//! ```text
//! key = SHA-256( master as u64 little-endian || tag as UTF-8 || 0x00 || index as u64 little-endian )
//! rng = ChaCha8Rng::from_seed(key)
//! ```
//!
//! Any implementation with SHA-256 and ChaCha8 (rand_chacha word order)
//! reproduces the same streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

pub fn derive_key(master: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Stream for `(master, tag, index)`.
pub fn stream(master: u64, tag: &str, index: u64) -> Stream {
    ChaCha8Rng::from_seed(derive_key(master, tag, index))
}

/// Derived 64-bit seed, for APIs that take a plain integer seed.
pub fn sub_seed(master: u64, tag: &str, index: u64) -> u64 {
    let k = derive_key(master, tag, index);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}

/// Stream for a plain integer seed.
pub fn from_seed(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
