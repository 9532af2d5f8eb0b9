//! Seeded random sources.
//!
//! Every stochastic component draws from a ChaCha8 stream derived from a
//! single `u64` seed, so a run is fully reproducible from its seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type SeededRng = ChaCha8Rng;

/// Builds a seeded stream.
pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a salt: `splitmix64(base ^ splitmix64(salt))`.
///
/// Used to derive independent per-purpose and per-cell seeds from one
/// user-facing seed.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// Random streams owned by a selection policy.
///
/// Group-level and dataset-level Thompson draws use separate streams so the
/// dataset-level draw sequence does not depend on how many group draws
/// preceded it.
#[derive(Debug, Clone)]
pub struct PolicyRng {
    pub group: SeededRng,
    pub dataset: SeededRng,
}

impl PolicyRng {
    pub fn new(seed: u64) -> Self {
        let mut group = seeded(seed);
        group.set_stream(1);
        let mut dataset = seeded(seed);
        dataset.set_stream(2);
        Self { group, dataset }
    }
}
