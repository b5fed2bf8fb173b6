//! Seeded random streams and categorical sampling from logits.
//!
//! Every stochastic step in the pipeline draws from a ChaCha8 stream. ChaCha
//! is a counter-mode generator with a platform independent output sequence, so
//! a seed fixes results on every target. Independent streams (one per entity,
//! one per training run) are derived by hashing the seed with a label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream keyed by `(seed, label)`, e.g. `(run seed, entity id)`.
pub fn derive_rng(seed: u64, label: &str) -> SeededRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Softmax with the maximum logit subtracted first.
///
/// `-inf` logits get probability zero. Returns an empty vector for empty
/// input.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Inverse-CDF sampler over a fixed discrete distribution.
#[derive(Clone, Debug)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    /// Builds from non-negative weights (need not be normalized). Returns
    /// `None` if no weight is positive or any weight is negative/non-finite.
    pub fn from_weights(weights: &[f64]) -> Option<Self> {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(weights.len());
        for &w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return None;
            }
            acc += w;
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return None;
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Some(Self { cdf })
    }

    pub fn from_logits(logits: &[f64]) -> Option<Self> {
        Self::from_weights(&softmax(logits))
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        // First index whose cdf exceeds u; it always carries positive mass.
        let idx = self.cdf.partition_point(|&c| c <= u);
        if idx < self.cdf.len() {
            return idx;
        }
        // Rounding left the final cdf entry just below u: take the last
        // outcome with mass.
        let last = self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c < last)
    }
}
