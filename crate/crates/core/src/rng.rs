//! Replicate-indexed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose key is
//! derived from `(seed, domain)` and whose stream id is the replicate index,
//! so replicate `b` is a pure function of `(seed, domain, b)` regardless of
//! the order in which replicates are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates independent uses of the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 1,
    Bootstrap = 2,
    Split = 3,
    Study = 4,
    Test = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed; used to hand each Monte Carlo replicate its own
/// bootstrap seed.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ (domain as u64).rotate_left(32)) ^ splitmix64(index))
}

/// The generator for replicate `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ (domain as u64).wrapping_mul(0xa076_1d64_78bd_642f);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
