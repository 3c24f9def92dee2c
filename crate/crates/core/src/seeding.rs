//! Deterministic random substreams.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from the run
//! seed and a tuple of tags (stream kind, round, client id, ...). Tags are
//! folded in with the SplitMix64 finalizer:
//!
//! ```text
//! state = splitmix64(seed)
//! for tag in tags: state = splitmix64(state ^ splitmix64(tag))
//! ```
//!
//! so streams never depend on scheduling or on how many workers ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA: u64 = 0x01;
pub const STREAM_PARTITION: u64 = 0x02;
pub const STREAM_INIT: u64 = 0x03;
pub const STREAM_TRAIN: u64 = 0x04;
pub const STREAM_POISON: u64 = 0x05;
pub const STREAM_CONSENSUS: u64 = 0x06;
pub const STREAM_ATTACKERS: u64 = 0x07;
pub const STREAM_KEYS: u64 = 0x08;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |state, &t| splitmix64(state ^ splitmix64(t)))
}

pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}
