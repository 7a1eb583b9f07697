//! Deterministic seed derivation.
//!
//! All randomness flows from one top-level seed through named substreams
//! (`data`, `bootstrap`, `batch`, ...) so that paired comparisons between
//! algorithms see identical datasets and resampling noise. Derivation is a
//! fixed hash, independent of platform and of `std` hasher internals.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of substream `name[index]` from a base seed.
pub fn substream_seed(seed: u64, name: &str, index: u64) -> u64 {
    let mixed = splitmix64(seed ^ fnv1a(name.as_bytes()));
    splitmix64(mixed ^ index.wrapping_mul(GOLDEN))
}

/// ChaCha8 generator for substream `name[index]`.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name, index))
}

/// ChaCha8 generator directly from a derived seed.
pub fn from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
