//! Seeded random streams.
//!
//! Every stochastic consumer (gating noise, imputation, batching, initialization,
//! corruption) draws from its own ChaCha stream so that adding draws in one place
//! never shifts the draws seen by another.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Purpose tags for independent random streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Gating = 2,
    Imputation = 3,
    Batching = 4,
    Corruption = 5,
    Sampling = 6,
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream as u64);
        Self { inner }
    }

    /// Stream keyed by an arbitrary sub-index, e.g. one per epoch.
    pub fn for_substream(seed: u64, stream: Stream, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        inner.set_stream(stream as u64);
        Self { inner }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// A seeded permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// Draws `mean + std * z` with `z` standard normal.
pub fn gaussian_sample(rng: &mut Rng, mean: &[f64], std: &[f64]) -> Result<Vec<f64>> {
    if mean.len() != std.len() {
        return Err(Error::Shape(format!(
            "mean has {} entries, std has {}",
            mean.len(),
            std.len()
        )));
    }
    if let Some(bad) = std.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Contract(format!(
            "standard deviation must be nonnegative, got {bad}"
        )));
    }
    Ok(mean
        .iter()
        .zip(std)
        .map(|(m, s)| {
            let z = rng.normal();
            if *s == 0.0 {
                *m
            } else {
                m + s * z
            }
        })
        .collect())
}
