//! Deterministic seed derivation.
//!
//! Every stochastic draw in the lab comes from a ChaCha stream whose seed is
//! mixed from a path of integers (experiment seed, step, iteration, purpose,
//! ...). Two runs with the same path see the same numbers regardless of the
//! order in which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes, kept distinct so that adding a draw in one place never
/// shifts another.
pub mod domain {
    pub const PRETRAIN: u64 = 0x5052_4554;
    pub const PRETRAIN_EVAL: u64 = 0x5045_5641;
    pub const INIT: u64 = 0x494e_4954;
    pub const REPLAY: u64 = 0x5245_504c;
    pub const UNLEARN: u64 = 0x554e_4c4e;
    pub const RETAIN: u64 = 0x5254_4e20;
    pub const BATCH: u64 = 0x4241_5443;
    pub const EVAL: u64 = 0x4556_414c;
    pub const GROUND_TRUTH: u64 = 0x4754_5255;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a path of integers into a single 64-bit seed.
pub fn derive_seed(path: &[u64]) -> u64 {
    path.iter().fold(0x243f_6a88_85a3_08d3, |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

pub fn stream(path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(path))
}
