//! Counter-based seed derivation.
//!
//! All randomness in the crate is keyed off 64-bit seeds that are split with the
//! SplitMix64 finalizer, so any replication, rule or permutation can be replayed
//! from the master seed alone.

use crate::coords::CoordSet;

pub(crate) const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed number `index` of `seed`.
#[inline]
pub fn derive(seed: u64, index: u64) -> u64 {
    mix(mix(seed ^ GOLDEN).wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Child seed keyed by a coordinate set; distinct sets give unrelated streams.
pub fn for_set(seed: u64, u: &CoordSet) -> u64 {
    let mut h = derive(seed, u.len() as u64 ^ 0x5e75);
    for j in u.iter() {
        h = derive(h, j as u64);
    }
    h
}
