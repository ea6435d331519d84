//! Reproducible random streams.
//!
//! Every random stream in the crate is addressed by a 64-bit master seed and
//! a short key (replica index, actor, opinion, ...). Streams are ChaCha8
//! instances: the master seed selects the ChaCha key and the hashed stream
//! key selects the ChaCha stream id, so any stream can be regenerated in
//! isolation, in any order, on any worker.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a stream key into a 64-bit ChaCha stream id.
pub fn key_hash(key: &[u64]) -> u64 {
    let mut acc = splitmix64(key.len() as u64);
    for &k in key {
        acc = splitmix64(acc ^ splitmix64(k));
    }
    acc
}

/// Open the stream addressed by `(seed, key)`.
pub fn stream(seed: u64, key: &[u64]) -> StreamRng {
    let mut bytes = [0u8; 32];
    let mut s = seed;
    for chunk in bytes.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(key_hash(key));
    rng
}

/// Stream domains, so that e.g. replica 3 of the finite simulator never
/// shares randomness with path 3 of the Picard solver.
pub mod domain {
    pub const FINITE: u64 = 1;
    pub const INITIAL: u64 = 2;
    pub const PICARD: u64 = 3;
    pub const COUPLING: u64 = 4;
    pub const HOUSE_OF_CARDS: u64 = 5;
    pub const LIMIT_PATH: u64 = 6;
    pub const DIAGNOSTIC: u64 = 7;
}
