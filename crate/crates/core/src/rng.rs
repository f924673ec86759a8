//! Seed derivation. Every random stream in the crate is keyed by a base seed
//! plus a path of integers (candidate, fold, bootstrap, ...), so results do not
//! depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `base`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

/// Stable numeric tags for seed paths.
pub(crate) mod stream {
    pub const CV_FOLDS: u64 = 1;
    pub const FIT: u64 = 2;
    pub const A2A: u64 = 3;
    pub const RESAMPLE: u64 = 4;
    pub const HILL_CLIMB: u64 = 5;
    pub const PIPELINE: u64 = 6;
    pub const CHUNKS: u64 = 7;
    pub const TREE: u64 = 8;
    pub const RANDOM_RANKING: u64 = 9;
    pub const SYNTH: u64 = 10;
}
