//! Deterministic seed derivation for independent random streams.
//!
//! Every stochastic operation in this crate draws from a [`ChaCha8Rng`]
//! seeded through [`substream_seed`], so results are a pure function of
//! (master seed, stream id). Sample `i` of a dataset, epoch `e` of a
//! training run, and stage `s` of a beam search each get their own stream;
//! serial and parallel execution therefore produce identical draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; full-period bijective mix of a 64-bit state.
#[inline]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of sub-stream `stream` from a master seed.
///
/// Two SplitMix64 rounds decorrelate nearby (master, stream) pairs.
#[inline]
pub fn substream_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master).wrapping_add(splitmix64(stream ^ 0xA5A5_A5A5_A5A5_A5A5)))
}

/// RNG for sub-stream `stream` of `master`.
pub fn substream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, stream))
}
