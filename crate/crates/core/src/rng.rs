//! Seeded random streams.
//!
//! Every stochastic routine in the crate draws from [`ChaCha8Rng`], a
//! counter-based stream cipher generator. `seed_from_u64` expands the 64-bit
//! seed with PCG32 as documented by `rand_core`, so a given seed yields the
//! same bit stream on every platform. Normal deviates use the ziggurat
//! sampler of `rand_distr::StandardNormal`, which consumes whole `u64` words
//! and is likewise platform independent.
//!
//! Independent sub-streams (per epoch, per sample, per grid point) are keyed
//! by mixing the run seed with a list of integer labels through SplitMix64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a path of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(seed: u64, labels: &[u64]) -> Rng {
    rng_from_seed(derive_seed(seed, labels))
}
