//! Seed splitting.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, domain, index)`. The key is folded through SplitMix64:
//!
//! ```text
//! key = mix(mix(mix(seed) ^ domain) ^ index)
//! ```
//!
//! so streams for different domains or indices are independent of each other
//! and of the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod domain {
    pub const MULTIPATH: u64 = 0x6d75_6c74;
    pub const OFFLINE: u64 = 0x6f66_666c;
    pub const MEASUREMENT: u64 = 0x6d65_6173;
    pub const SCHEME: u64 = 0x7363_6865;
    pub const OPTIMIZER: u64 = 0x6f70_7469;
    pub const VERIFY: u64 = 0x7665_7269;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn split_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index)
}

pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(seed, domain, index))
}
