//! Seeded random streams.
//!
//! Every stochastic step takes an explicit generator. Independent sub-streams (one per
//! fold, repeat or subject) are derived from a master seed and a stream index, so the
//! order in which streams are consumed never changes their contents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut impl Rng, out: &mut [f64], sd: f64) {
    for v in out {
        *v = sd * normal(rng);
    }
}
