//! Seed derivation that is stable across platforms, toolchains and worker counts.
//!
//! Every consumer of randomness derives its own stream from the run seed plus a
//! textual label (usually a probe id), so the order in which items are generated
//! never changes the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hash a seed and label into 32 bytes.
pub fn seed_digest(seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

/// Derive a 64-bit sub-seed for `label`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let digest = seed_digest(seed, label);
    u64::from_le_bytes(digest[..8].try_into().expect("digest holds 32 bytes"))
}

/// Independent RNG stream for `label` under `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed_digest(seed, label))
}
