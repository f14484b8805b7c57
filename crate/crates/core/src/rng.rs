//! Seeded random streams.
//!
//! All randomness derives from one 64-bit seed; independent consumers ask for
//! a named substream so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

// FNV-1a followed by a splitmix64 finalizer.
fn mix(seed: u64, name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes().chain(index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, name: &str) -> Stream {
    ChaCha8Rng::seed_from_u64(mix(seed, name, 0))
}

pub fn indexed_substream(seed: u64, name: &str, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(mix(seed, name, index))
}
