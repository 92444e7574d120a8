//! Seeded RNG construction shared by generators, training, and experiments.
//!
//! Every random choice in the crate flows through a ChaCha8 stream seeded
//! explicitly, so a (seed, purpose) pair always reproduces the same bytes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent sub-seed from a base seed and a purpose tag.
///
/// splitmix64 finalizer over the xor; decorrelates streams that share a
/// base seed (e.g. model init vs. label noise vs. data shuffling).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible generator for the given seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hash a node id into a slot index; stable across processes and builds.
pub fn hash_to_slot(node: u64, slots: usize) -> usize {
    debug_assert!(slots > 0);
    (derive_seed(node, 0x6e6f_6465) % slots as u64) as usize
}
