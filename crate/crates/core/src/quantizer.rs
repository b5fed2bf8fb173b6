//! Latent codebook shared by all sentence heads.
//!
//! Training quantizes each head by sampling `m` codes from a multinomial over
//! negative squared distances and averaging their embeddings. Code embeddings
//! are not trained by gradient; they follow exponential moving averages of the
//! head vectors assigned to them. Inference assigns each head to its nearest
//! code and counts assignments per code.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::MultiHeadEncoding;
use crate::sampling::{softmax, Categorical};

pub const DEFAULT_EMA_DECAY: f64 = 0.99;
pub const DEFAULT_EMA_EPSILON: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum QuantizerError {
    #[error("head vector contains non-finite values")]
    NonFinite,
    #[error("expected vectors of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("code id {code} out of range for codebook of size {size}")]
    CodeOutOfRange { code: usize, size: usize },
    #[error("at least one sample is required")]
    NoSamples,
    #[error("no encodings to assign")]
    Empty,
}

pub type Result<T> = std::result::Result<T, QuantizerError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    size: usize,
    dim: usize,
    embeddings: Vec<f32>,
    ema_counts: Vec<f64>,
    ema_sums: Vec<f64>,
    decay: f64,
    epsilon: f64,
}

/// Result of soft quantization of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAssignment {
    pub codes: Vec<usize>,
    pub quantized: Vec<f32>,
}

/// Hard assignment of every (sentence, head) pair plus code popularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub heads: usize,
    /// `(code, squared distance)` at index `sentence * heads + head`.
    pub assignments: Vec<(usize, f64)>,
    /// Number of assignments received by each code.
    pub popularity: Vec<u64>,
}

impl AssignmentTable {
    pub fn num_sentences(&self) -> usize {
        self.assignments.len() / self.heads.max(1)
    }

    pub fn code(&self, sentence: usize, head: usize) -> usize {
        self.assignments[sentence * self.heads + head].0
    }

    pub fn total(&self) -> u64 {
        self.popularity.iter().sum()
    }

    /// `usage[k * heads + h]` counts assignments of head `h` to code `k`.
    pub fn code_head_usage(&self) -> Vec<u64> {
        let mut usage = vec![0u64; self.popularity.len() * self.heads];
        for (idx, &(code, _)) in self.assignments.iter().enumerate() {
            usage[code * self.heads + idx % self.heads] += 1;
        }
        usage
    }
}

/// Head that assigns most often to each code, `None` for unused codes.
pub fn code_owners(usage: &[u64], heads: usize) -> Vec<Option<usize>> {
    usage
        .chunks(heads)
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return None;
            }
            // lowest head wins ties
            let mut best = 0;
            for (h, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = h;
                }
            }
            Some(best)
        })
        .collect()
}

/// Fraction of assignments that go to their code's majority head. 1.0 means
/// every code is used by a single head.
pub fn head_purity(usage: &[u64], heads: usize) -> f64 {
    let mut majority = 0u64;
    let mut total = 0u64;
    for row in usage.chunks(heads) {
        majority += row.iter().copied().max().unwrap_or(0);
        total += row.iter().sum::<u64>();
    }
    if total == 0 {
        return 1.0;
    }
    majority as f64 / total as f64
}

impl Codebook {
    /// Codebook with the given embeddings; EMA statistics start at one unit of
    /// mass per code so the embedding invariant holds immediately.
    pub fn from_embeddings(size: usize, dim: usize, embeddings: Vec<f32>, decay: f64, epsilon: f64) -> Self {
        assert_eq!(embeddings.len(), size * dim, "codebook shape mismatch");
        let ema_sums = embeddings.iter().map(|&v| v as f64).collect();
        Self {
            size,
            dim,
            embeddings,
            ema_counts: vec![1.0; size],
            ema_sums,
            decay,
            epsilon,
        }
    }

    pub fn zeros(size: usize, dim: usize, decay: f64, epsilon: f64) -> Self {
        Self::from_embeddings(size, dim, vec![0.0; size * dim], decay, epsilon)
    }

    /// Restores a codebook with explicit EMA state (checkpoint loading).
    pub fn from_state(
        size: usize,
        dim: usize,
        embeddings: Vec<f32>,
        ema_counts: Vec<f64>,
        ema_sums: Vec<f64>,
        decay: f64,
        epsilon: f64,
    ) -> Self {
        assert_eq!(embeddings.len(), size * dim);
        assert_eq!(ema_counts.len(), size);
        assert_eq!(ema_sums.len(), size * dim);
        Self {
            size,
            dim,
            embeddings,
            ema_counts,
            ema_sums,
            decay,
            epsilon,
        }
    }

    /// Seeds code embeddings from a pool of head vectors: k-means++ style
    /// draws (probability proportional to squared distance from the codes
    /// already chosen), falling back to uniform draws once the pool is
    /// exhausted, each perturbed by Gaussian noise of standard deviation
    /// `noise`.
    pub fn init_from_vectors<R: Rng + ?Sized>(&mut self, pool: &[&[f32]], noise: f64, rng: &mut R) {
        assert!(!pool.is_empty(), "cannot seed a codebook from an empty pool");
        let normal = Normal::new(0.0, noise.max(0.0)).expect("valid noise");
        let mut nearest_sq = vec![f64::INFINITY; pool.len()];
        for k in 0..self.size {
            let pick = match Categorical::from_weights(
                &nearest_sq
                    .iter()
                    .map(|&d| if d.is_infinite() { 1.0 } else { d })
                    .collect::<Vec<_>>(),
            ) {
                Some(c) => c.sample(rng),
                None => rng.gen_range(0..pool.len()),
            };
            let src = pool[pick];
            let row: Vec<f32> = src
                .iter()
                .map(|&v| (v as f64 + if noise > 0.0 { normal.sample(rng) } else { 0.0 }) as f32)
                .collect();
            for (d, v) in nearest_sq.iter_mut().zip(pool) {
                *d = d.min(sq_dist(v, src));
            }
            self.set_code(k, &row);
        }
    }

    /// Replaces code `k` with `vector` and resets its EMA statistics to one
    /// unit of mass.
    pub fn set_code(&mut self, k: usize, vector: &[f32]) {
        assert_eq!(vector.len(), self.dim);
        self.embeddings[k * self.dim..(k + 1) * self.dim].copy_from_slice(vector);
        self.ema_counts[k] = 1.0;
        for (s, &v) in self.ema_sums[k * self.dim..(k + 1) * self.dim].iter_mut().zip(vector) {
            *s = v as f64;
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn embedding(&self, k: usize) -> &[f32] {
        &self.embeddings[k * self.dim..(k + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    pub fn ema_sums(&self) -> &[f64] {
        &self.ema_sums
    }

    fn check(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim {
            return Err(QuantizerError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(QuantizerError::NonFinite);
        }
        Ok(())
    }

    /// Squared Euclidean distance from `x` to every code.
    pub fn sq_distances(&self, x: &[f32]) -> Vec<f64> {
        (0..self.size).map(|k| sq_dist(x, self.embedding(k))).collect()
    }

    /// Nearest code and its squared distance; the lowest id wins ties.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.size {
            let d = sq_dist(x, self.embedding(k));
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Sampling distribution over codes: `softmax(-‖x - e_k‖²)`.
    pub fn code_probabilities(&self, x: &[f32]) -> Vec<f64> {
        let logits: Vec<f64> = self.sq_distances(x).into_iter().map(|d| -d).collect();
        softmax(&logits)
    }

    /// Draws `m` codes with replacement from `softmax(-‖x - e_k‖²)` and
    /// averages their embeddings.
    pub fn soft_assign<R: Rng + ?Sized>(&self, x: &[f32], m: usize, rng: &mut R) -> Result<SoftAssignment> {
        if m == 0 {
            return Err(QuantizerError::NoSamples);
        }
        self.check(x)?;
        let dist = Categorical::from_weights(&self.code_probabilities(x)).ok_or(QuantizerError::NonFinite)?;
        let codes: Vec<usize> = (0..m).map(|_| dist.sample(rng)).collect();
        let quantized = self.mean_embedding(&codes);
        Ok(SoftAssignment { codes, quantized })
    }

    /// Arithmetic mean of the embeddings of `codes`.
    pub fn mean_embedding(&self, codes: &[usize]) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for &k in codes {
            for (a, &v) in acc.iter_mut().zip(self.embedding(k)) {
                *a += v as f64;
            }
        }
        let m = codes.len() as f64;
        acc.into_iter().map(|v| (v / m) as f32).collect()
    }

    /// EMA update from hard assignments.
    pub fn ema_update(&mut self, batch: &[(&[f32], usize)]) -> Result<()> {
        let weighted: Vec<(&[f32], usize, f64)> = batch.iter().map(|&(x, k)| (x, k, 1.0)).collect();
        self.ema_update_weighted(&weighted)
    }

    /// EMA update where each `(vector, code, weight)` contributes `weight`
    /// units of mass to `code`. Hard assignment uses weight 1; expected soft
    /// counts use fractional weights.
    pub fn ema_update_weighted(&mut self, batch: &[(&[f32], usize, f64)]) -> Result<()> {
        let mut counts = vec![0.0f64; self.size];
        let mut sums = vec![0.0f64; self.size * self.dim];
        for &(x, k, w) in batch {
            if k >= self.size {
                return Err(QuantizerError::CodeOutOfRange { code: k, size: self.size });
            }
            self.check(x)?;
            counts[k] += w;
            for (s, &v) in sums[k * self.dim..(k + 1) * self.dim].iter_mut().zip(x) {
                *s += w * v as f64;
            }
        }
        let g = self.decay;
        for k in 0..self.size {
            self.ema_counts[k] = g * self.ema_counts[k] + (1.0 - g) * counts[k];
            let denom = self.ema_counts[k].max(self.epsilon);
            let range = k * self.dim..(k + 1) * self.dim;
            for j in range {
                self.ema_sums[j] = g * self.ema_sums[j] + (1.0 - g) * sums[j];
                self.embeddings[j] = (self.ema_sums[j] / denom) as f32;
            }
        }
        Ok(())
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Assigns every head of every encoding to its nearest code and counts
/// assignments per code.
pub fn hard_assign(cb: &Codebook, encodings: &[MultiHeadEncoding]) -> Result<AssignmentTable> {
    let first = encodings.first().ok_or(QuantizerError::Empty)?;
    let heads = first.heads();
    for e in encodings {
        if e.dim() != cb.dim() {
            return Err(QuantizerError::Dimension {
                expected: cb.dim(),
                got: e.dim(),
            });
        }
        if e.heads() != heads {
            return Err(QuantizerError::Dimension {
                expected: heads,
                got: e.heads(),
            });
        }
    }
    let per_sentence: Vec<Vec<(usize, f64)>> = encodings
        .par_iter()
        .map(|e| (0..heads).map(|h| cb.nearest(e.head(h))).collect())
        .collect();
    let assignments: Vec<(usize, f64)> = per_sentence.into_iter().flatten().collect();
    let mut popularity = vec![0u64; cb.size()];
    for &(k, _) in &assignments {
        popularity[k] += 1;
    }
    Ok(AssignmentTable {
        heads,
        assignments,
        popularity,
    })
}
