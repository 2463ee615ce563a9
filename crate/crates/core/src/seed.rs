//! Reproducible per-trajectory random streams.
//!
//! Every trajectory of an ensemble gets its own ChaCha8 stream seeded with
//! `splitmix64(base_seed ^ index)`. Distinct experiments drawing from the
//! same base seed first derive a sub-seed with [`stream_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrajectoryRng = ChaCha8Rng;

/// The SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index` in an ensemble with base seed `base`.
pub fn trajectory_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index)
}

/// Base seed of a named sub-experiment.
pub fn stream_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_from_seed(seed: u64) -> TrajectoryRng {
    ChaCha8Rng::seed_from_u64(seed)
}
