//! Deterministic random-state derivation.
//!
//! Every batch operation derives one generator per work item from
//! `(seed, stream, index)` through a SplitMix64 mixing chain, so results do
//! not depend on how items are scheduled across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

/// Stream tags keep independent consumers of one seed apart.
pub mod stream {
    pub const TRIAL: u64 = 0x5452_4941_4c00_0001;
    pub const PATH: u64 = 0x5041_5448_0000_0002;
    pub const MEANDER: u64 = 0x4d45_414e_4400_0003;
    pub const LADDER: u64 = 0x4c41_4444_4552_0004;
    pub const CONDITIONED: u64 = 0x434f_4e44_0000_0005;
    pub const THETA: u64 = 0x5448_4554_4100_0006;
    pub const WALK: u64 = 0x5741_4c4b_0000_0007;
    pub const AUX: u64 = 0x4155_5800_0000_0008;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Child seed for a nested batch (e.g. the n-th rung of a ladder of runs).
pub fn child_seed(seed: u64, label: u64) -> u64 {
    derive_seed(seed, stream::AUX, label)
}
