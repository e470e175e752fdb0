//! Seed plumbing. Every random stream in a run is derived from one root seed.
//!
//! `derive(seed, stream)` is splitmix64 applied to
//! `seed + stream * 0x9E3779B97F4A7C15`, so neighbouring streams land far apart.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags for [`derive`].
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SPHERE: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const CURATE: u64 = 4;
    pub const OL_TRAIN: u64 = 5;
    pub const OL_TEST: u64 = 6;
    pub const OL_VAL: u64 = 7;
    pub const PROBE: u64 = 8;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    rng(derive(seed, stream))
}
