//! Deterministic random streams.
//!
//! Every stochastic choice in the crate draws from a [`ChaCha8Rng`] seeded
//! by the run seed plus a named stream tag and integer coordinates
//! (epoch, step, ...). Streams are therefore independent of each other and
//! of call order: adding draws to one stream never shifts another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives the RNG for one named stream of a run.
///
/// The 32-byte ChaCha seed packs the run seed, a hash of the stream tag,
/// and up to two coordinates (e.g. epoch and step). Identical inputs give
/// bitwise-identical streams on every platform.
pub fn stream_rng(seed: u64, tag: &str, coords: &[u64]) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&fnv1a(tag.as_bytes()).to_le_bytes());
    for (slot, &c) in coords.iter().take(2).enumerate() {
        let at = 16 + slot * 8;
        bytes[at..at + 8].copy_from_slice(&c.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// 64-bit FNV-1a, used to turn stream tags and source identifiers into
/// fixed-width keys.
pub fn fnv1a(data: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in data {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
