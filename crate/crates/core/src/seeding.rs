//! One run seed expands into independent streams:
//! `derive_seed(seed, stream) = splitmix64(seed ^ splitmix64(stream))`,
//! and each stream drives its own ChaCha8 generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_TRAIN: u64 = 3;
pub const STREAM_EVAL: u64 = 4;
pub const STREAM_ATTACK: u64 = 5;
pub const STREAM_CLEAN: u64 = 6;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
