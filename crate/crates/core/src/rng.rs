//! Counter-keyed random streams.
//!
//! Every random draw in the toolkit comes from a generator keyed on a master
//! seed plus a tuple of indices (budget, point, realization, replicate...).
//! A draw therefore depends only on its key, never on evaluation order or on
//! how many worker threads exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed and a key into a 64-bit sub-seed.
pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for (i, k) in key.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(k.wrapping_add((i as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93))));
    }
    h
}

/// ChaCha stream for `(seed, key)`.
pub fn keyed_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    let mut h = derive_seed(seed, key);
    for chunk in bytes.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
