//! Deterministic random substreams.
//!
//! Every random decision in the engine draws from a stream derived from the
//! run seed, the step index and the lineage hash of the branch involved, so
//! results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes, mixed into the derived seed so different decisions about
/// the same branch are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Timing = 1,
    Prune = 2,
    Cap = 3,
    Trajectory = 4,
    Oracle = 5,
}

/// SplitMix64 output function.
#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn combine(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b))
}

fn derive(seed: u64, purpose: Purpose, step: u64, key: u64) -> u64 {
    StreamKey::new(seed, purpose, step).derive(key)
}

/// The `(seed, purpose, step)` prefix of a keyed draw, hoisted out of loops
/// that draw for many keys at once.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, step: u64) -> Self {
        Self(combine(combine(seed, purpose as u64), step))
    }

    #[inline]
    fn derive(self, key: u64) -> u64 {
        mix64(self.0 ^ key)
    }

    /// Same value as [`keyed_uniform`] with the matching prefix.
    #[inline]
    pub fn uniform(self, key: u64) -> f64 {
        let bits = self.derive(key) >> 11;
        (bits + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Seeded generator for one (purpose, step, key) triple.
pub fn substream(seed: u64, purpose: Purpose, step: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, step, key))
}

/// A uniform variate in (0, 1] that is a pure function of its inputs.
#[inline]
pub fn keyed_uniform(seed: u64, purpose: Purpose, step: u64, key: u64) -> f64 {
    StreamKey::new(seed, purpose, step).uniform(key)
}
