//! Seed derivation for reproducible, thread-count independent sampling.
//!
//! Every random draw in the crate goes through a [`ChaCha8Rng`] keyed by a
//! seed derived from a root seed and a path of integer labels (cell index,
//! trial index, purpose tag). ChaCha is counter based, so two streams with
//! different keys never overlap regardless of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags that keep independent draws inside one trial apart.
pub mod tag {
    pub const BASIS: u64 = 1;
    pub const COV: u64 = 2;
    pub const TASK: u64 = 3;
    pub const DEMOS: u64 = 4;
    pub const QUERY: u64 = 5;
    pub const PERTURB: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const CONTROL: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a label path.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, path: &[u64]) -> Rng {
    rng_from_seed(derive_seed(root, path))
}
