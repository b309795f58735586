//! Seed derivation.
//!
//! Every stochastic stage draws from its own ChaCha8 stream whose seed is a
//! splitmix64 mix of the master seed, a stage name, and up to two indices.
//! ChaCha8 is platform-independent, so runs replay bit-exactly everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives the seed for `stage` (and optional sub-indices) from `master`.
pub fn derive_seed(master: u64, stage: &str, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(master ^ fnv1a(stage.as_bytes()));
    s = splitmix64(s ^ a.wrapping_mul(GOLDEN));
    splitmix64(s ^ b.wrapping_add(0x632B_E59B_D9B4_E019))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a content hash, used for model identifiers.
pub fn content_hash(bytes: &[u8]) -> u64 {
    fnv1a(bytes)
}
