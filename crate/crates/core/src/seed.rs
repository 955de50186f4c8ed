//! Seed derivation. All randomness flows from explicit seeds through ChaCha8.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-(epoch, clip) seed: SHA-256 over the global seed, the epoch and the
/// clip id, truncated to 64 bits.
pub fn item_seed(global: u64, epoch: u64, clip_id: &str) -> u64 {
    derive(global, &[&epoch.to_le_bytes(), clip_id.as_bytes()])
}

/// Mixes a labelled stream into a seed, e.g. `derive(seed, &[b"init"])`.
pub fn derive(global: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}
