//! Seeded random streams.
//!
//! Every stochastic step derives its own stream from a root seed and a
//! tuple of indices, so results do not depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finaliser; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(root, path...)`.
pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    let mut h = mix(root);
    for &p in path {
        h = mix(h ^ mix(p));
    }
    ChaCha8Rng::seed_from_u64(h)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
