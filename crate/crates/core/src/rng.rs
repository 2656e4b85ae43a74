//! Seed discipline: every stage derives its randomness from one global seed
//! through named substreams, so any stage can be reproduced in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `(seed, name, index)`.
///
/// The derivation is a SHA-256 hash truncated to 64 bits, so it is stable
/// across platforms and releases. Distinct names or indices give
/// independent streams.
pub fn substream(seed: u64, name: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// A seeded generator for the given substream.
pub fn stream_rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, name, index))
}
