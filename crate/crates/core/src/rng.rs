//! Seeded randomness.
//!
//! Every stochastic step (weight init, dropout masks, shuffling, coalition
//! sampling, synthetic data) draws from ChaCha8, a counter-based stream
//! generator. Independent streams are derived from the run seed with
//! [`derive_seed`], so the same seed always reproduces the same run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a path of integer labels.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stable 64-bit hash of a label (FNV-1a), used to name streams.
pub fn label(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for a named sub-stream of `seed`.
pub fn stream(seed: u64, name: &str, path: &[u64]) -> Rng {
    let mut p = Vec::with_capacity(path.len() + 1);
    p.push(label(name));
    p.extend_from_slice(path);
    rng_from(derive_seed(seed, &p))
}
