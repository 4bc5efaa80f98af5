//! Seeded random streams.
//!
//! Every random draw in the crate comes from a xoshiro256++ generator whose
//! 256-bit state is expanded from a 64-bit seed by splitmix64. Independent
//! work items (permutation `t`, target `i`, projection `l`) each get their
//! own stream keyed by `(base seed, stream index)`, so results never depend
//! on the order or thread in which items run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// Stream tags for draws that are not indexed by a loop counter.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4c49_5400_0000;
    pub const REF_IT: u64 = 0x5245_4649_5400_0000;
    pub const REF_OOT: u64 = 0x5245_464f_4f54_0000;
    pub const TARGET: u64 = 0x5441_5247_4554_0000;
    pub const SAMPLE: u64 = 0x5341_4d50_4c45_0000;
    pub const DIRECTION: u64 = 0x4449_5245_4354_0000;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(base, stream)`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

pub fn stream_rng(base: u64, stream: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, stream))
}

/// Uniform random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
