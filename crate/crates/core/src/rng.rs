//! Keyed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is built from
//! `(seed, path, index, domain)`. Streams for different keys are
//! independent, and adding paths never changes the draws of existing ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a stream is used for; keeps e.g. kick and Wiener draws apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Kick = 1,
    Wiener = 2,
    InitialState = 3,
    Dictionary = 4,
    Sampling = 5,
}

/// Root of the stream hierarchy for one experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, path: 0 }
    }

    pub fn path(self, path: u64) -> Self {
        Self { path, ..self }
    }

    /// Generator for draw group `index` (a kick, a time interval, …).
    pub fn stream(self, domain: Domain, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.path.to_le_bytes());
        key[16..24].copy_from_slice(&index.to_le_bytes());
        key[24..].copy_from_slice(&(domain as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}
