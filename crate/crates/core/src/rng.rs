//! Seed derivation. One run seed fans out into independent per-stage and
//! per-index generator states, so results do not depend on scheduling.
//!
//! The mixing is written out explicitly (FNV-1a over the stream name, then
//! SplitMix64) rather than going through `std::hash`, whose output is not
//! guaranteed to be stable across toolchains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Sub-seed for a named stage.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    splitmix64(splitmix64(seed) ^ fnv1a(stream.as_bytes()))
}

/// Sub-seed for item `index` of a named stage.
pub fn derive_indexed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, stream) ^ splitmix64(index))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, name: &str) -> Rng {
    seeded(derive_seed(seed, name))
}

pub fn indexed_stream(seed: u64, name: &str, index: u64) -> Rng {
    seeded(derive_indexed(seed, name, index))
}
