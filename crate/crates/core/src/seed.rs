//! Seed derivation.
//!
//! Every random stream is keyed by a path of integers (master seed, task
//! index, member index, ...). Mixing uses the SplitMix64 finalizer so that
//! neighbouring paths give unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of indices.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream labels used as the first path element, so that e.g. the
/// initialization stream of task 3 never coincides with its perturbation
/// stream.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PERTURB: u64 = 2;
    pub const DIAMETER: u64 = 3;
    pub const POWER: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const TOY: u64 = 6;
}
