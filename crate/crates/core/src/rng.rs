//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`ChaCha20Rng`] seeded with
//! `ChaCha20Rng::seed_from_u64`, and normal variates come from the ziggurat
//! sampler in `rand_distr` 0.5.1 ([`StandardNormal`]). Both are pinned, so a
//! given seed produces bit-identical sketches on every platform.
//!
//! Independent streams are derived from a master seed with [`derive_seed`],
//! a SplitMix64 finalizer over `master + (stream + 1) * 0x9E37_79B9_7F4A_7C15`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type SketchRng = ChaCha20Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream id of the inlier sketch inside a key cache.
pub const INLIER_STREAM: u64 = 0;
/// Stream id of the outlier sketch inside a key cache.
pub const OUTLIER_STREAM: u64 = 1;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` from `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(master.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Seed for the sketch of a given `(layer, head)` pair.
///
/// Whether heads should share one sketch is left to the caller; this only
/// fixes how per-head seeds are obtained when they do not.
pub fn head_seed(master: u64, layer: u64, head: u64) -> u64 {
    derive_seed(derive_seed(master, layer), head)
}

pub fn rng_from_seed(seed: u64) -> SketchRng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
