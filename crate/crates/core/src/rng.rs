//! Deterministic random streams keyed by `(seed, purpose, index)`.
//!
//! Every generated example gets its own stream, so output is independent of
//! iteration order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ purpose) ^ index)
}

pub fn stream(seed: u64, purpose: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose, index))
}

/// Purpose tags for the independent streams.
pub mod purpose {
    pub const SPLIT: u64 = 0x01;
    pub const BASE: u64 = 0x10;
    pub const WEAK_ONLY: u64 = 0x20;
    pub const STRONG_ONLY: u64 = 0x30;
    pub const CONTROL: u64 = 0x40;
    pub const NOISE: u64 = 0x50;
    pub const TEST: u64 = 0x60;
    pub const PROBE: u64 = 0x70;
    pub const VALIDATION: u64 = 0x1000;
    pub const INIT: u64 = 0x2000;
    pub const SHUFFLE: u64 = 0x3000;
    pub const BOOTSTRAP: u64 = 0x4000;
}
