//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream selected by `(seed, tag)`, so adding or removing one component
//! never shifts the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Real;

pub type Rng = ChaCha8Rng;

/// Independent stream for `tag` under `seed`.
pub fn stream(seed: u64, tag: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Stable 64-bit tag from a string label (FNV-1a).
pub fn tag(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stream for a labelled sub-component, e.g. `named(seed, "branch1.block3")`.
pub fn named(seed: u64, label: &str) -> Rng {
    stream(seed, tag(label))
}

pub fn normal<T: Real>(rng: &mut Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::lit(v)
}
