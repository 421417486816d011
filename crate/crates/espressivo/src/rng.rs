//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream keyed by
//! `(base seed, purpose tags...)`, so any point of a run can be reproduced
//! without carrying mutable RNG state around (checkpoint resume included).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Collapse a base seed and purpose tags into one stream key.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(base);
    for &t in tags {
        h = splitmix64(h ^ t);
    }
    h
}

/// ChaCha stream for `(base, tags...)`.
pub fn derive_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Purpose tags, kept in one place so streams can never collide by typo.
pub mod stream {
    /// Melody of one synthetic piece group.
    pub const MELODY: u64 = 1;
    /// Velocity pattern of one synthetic piece group.
    pub const VELOCITY: u64 = 2;
    /// Per-epoch shuffle of training pieces.
    pub const SHUFFLE: u64 = 3;
    /// Per-epoch crop starts.
    pub const CROP: u64 = 4;
    /// Per-step reparameterization noise.
    pub const NOISE: u64 = 5;
    /// Parameter initialization.
    pub const INIT: u64 = 6;
    /// Sampled style-transfer latents.
    pub const STYLE_SAMPLE: u64 = 7;
}
