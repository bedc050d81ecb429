//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha8 stream derived from the
//! run seed, a stage tag and an index, so adding a draw in one stage never
//! perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const INIT: u64 = 4;
    pub const CLIENT_SAMPLE: u64 = 5;
    pub const CLIENT_TRAIN: u64 = 6;
    pub const EIGEN: u64 = 7;
    pub const KMEANS: u64 = 8;
    pub const LIME: u64 = 9;
    pub const SHAP: u64 = 10;
    pub const SILHOUETTE: u64 = 11;
    pub const HOLDOUT: u64 = 12;
    pub const EXPLAIN_SAMPLE: u64 = 13;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic generator for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(tag ^ splitmix64(index)));
    ChaCha8Rng::seed_from_u64(mixed)
}
