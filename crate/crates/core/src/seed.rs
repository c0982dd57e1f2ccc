//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of (base seed,
//! identifiers), so results never depend on iteration order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a seed with one integer key.
#[inline]
pub fn derive(seed: u64, key: u64) -> u64 {
    mix(mix(seed) ^ key.rotate_left(17))
}

/// Combines a seed with a string key (FNV-1a over the bytes, then mixed).
pub fn derive_str(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // length disambiguates keys that are prefixes of one another
    derive(seed, h ^ (key.len() as u64).wrapping_mul(0x9e37_79b9))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
