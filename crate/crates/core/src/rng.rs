//! Seeded random streams.
//!
//! Every stochastic routine draws from a ChaCha8 generator so that a
//! `(seed, salt)` pair pins the whole output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Chain streams use `seed ^ chain_id`.
pub fn chain_seed(seed: u64, chain_id: u64) -> u64 {
    seed ^ chain_id
}

/// Mixes a salt into a seed (splitmix64 finalizer) to derive independent
/// sub-streams, e.g. one per held-out document.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Draws an index with probability proportional to `weights`.
///
/// `weights` must be nonnegative with a positive finite sum.
pub fn sample_index(rng: &mut Rng, weights: &[f64]) -> usize {
    use rand::Rng as _;
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    // rounding can leave u marginally above the last bucket
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}
