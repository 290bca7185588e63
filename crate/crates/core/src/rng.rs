//! Named RNG streams derived from a single master seed.
//!
//! Each consumer (world generation, episode generation, parameter init,
//! DAgger sampling, ...) draws from its own ChaCha stream keyed by
//! `sha256(master_seed ‖ name ‖ index)`, so toggling one consumer never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const ENV_GEN: &str = "env-gen";
pub const EPISODE_GEN: &str = "episode-gen";
pub const INIT: &str = "init";
pub const DAGGER: &str = "dagger";
pub const EVAL: &str = "eval";
pub const BATCH: &str = "batch";

pub fn stream(master: u64, name: &str) -> ChaCha8Rng {
    substream(master, name, 0)
}

pub fn substream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    let seed: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child seed (for APIs that take a plain `u64`).
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    use rand::RngCore;
    substream(master, name, index).next_u64()
}
