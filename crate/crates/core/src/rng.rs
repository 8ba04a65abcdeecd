//! Seed derivation for reproducible parallel Monte-Carlo.
//!
//! Every random stream in the crate is addressed by `(master seed, stream tag,
//! index)`. The three are folded through SplitMix64 so that streams for
//! different ions or realizations never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DETUNING: u64 = 0x01;
pub const STREAM_RABI: u64 = 0x02;
pub const STREAM_NOISE: u64 = 0x03;
pub const STREAM_BATH: u64 = 0x04;
pub const STREAM_JITTER: u64 = 0x05;
pub const STREAM_ZEEMAN: u64 = 0x06;
pub const STREAM_DETECTION: u64 = 0x07;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a stream tag and an index.
pub fn mix(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.rotate_left(32)) ^ index)
}

pub fn rng_for(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master, stream, index))
}
