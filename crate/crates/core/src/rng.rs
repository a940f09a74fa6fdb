//! Seedable generator shared by every stochastic operator.
//!
//! [`ReidRng`] is ChaCha with 8 rounds: a counter-based stream cipher whose
//! output is fully specified by the seed, independent of platform, word size
//! or thread count. A `u64` seed is expanded into the 256-bit key with the
//! PCG32 procedure of `rand_core::SeedableRng::seed_from_u64`.

use rand::SeedableRng;

pub type ReidRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ReidRng {
    ReidRng::seed_from_u64(seed)
}
