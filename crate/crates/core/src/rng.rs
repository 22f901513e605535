//! Seeded random streams.
//!
//! Every random decision in the crate draws from a ChaCha8 stream derived
//! from a user seed plus a path of integer tags, so that independent
//! consumers (initialization, epoch shuffling, fold assignment) never share
//! state and any of them can be re-created in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract.
pub mod tag {
    pub const FOLDS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const DIGIT_BAGS: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &t| {
        splitmix64(acc ^ splitmix64(t.wrapping_add(0x51_7C_C1_B7)))
    })
}

pub fn substream(seed: u64, path: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
