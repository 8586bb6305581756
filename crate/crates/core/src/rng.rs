//! Deterministic seed derivation.
//!
//! Every random stream in a run is a pure function of the run seed plus a
//! small set of integer tags, so runs replay bit-identically regardless of
//! execution order or thread count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping independent streams from colliding.
pub mod domain {
    pub const PARTITION: u64 = 0x70617274;
    pub const INIT: u64 = 0x696e6974;
    pub const AGENT: u64 = 0x6167656e;
    pub const BATCH: u64 = 0x62617463;
    pub const DATA_MEANS: u64 = 0x6d65616e;
    pub const DATA_NOISE: u64 = 0x6e6f6973;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a sequence of integers into a single 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x7261746573_u64;
    let mut acc = 0_u64;
    for &p in parts {
        state ^= p;
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Deterministic RNG keyed by the given integer parts.
pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    let mut state = mix(parts);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
