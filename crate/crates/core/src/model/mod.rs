//! Transformer sentence autoencoder with a multi-head quantized bottleneck.
//!
//! The encoder prepends `<snt>` to a sentence and keeps only that position's
//! output. The vector is split into `H` sub-vectors, each mapped back to `D`
//! dimensions by a shared projection and layer norm. The decoder reconstructs
//! the sentence while attending over the (quantized) head vectors instead of
//! token vectors.

mod checkpoint;
mod gradcheck;
mod network;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{ParamStore, Tape};
use crate::corpus::{TextEncoder, Tokenizer};
use crate::quantizer::{Codebook, DEFAULT_EMA_DECAY, DEFAULT_EMA_EPSILON};
use crate::sampling::{derive_rng, SeededRng};

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_FORMAT,
};
pub use gradcheck::{gradient_check, GradCheckReport, GroupError};
pub use network::{Dropout, Network};
pub use train::{train, EpochStats, TrainingLog};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite loss at step {step} (epoch {epoch}, batch {batch})")]
    NonFinite { step: u64, epoch: usize, batch: usize },
    #[error(transparent)]
    Quantizer(#[from] crate::quantizer::QuantizerError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture and optimization settings. Defaults reproduce the published
/// hotel-review configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub attn_heads: usize,
    pub sentence_heads: usize,
    pub vocab_size: usize,
    pub codebook_size: usize,
    pub soft_samples: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub use_positional_encodings: bool,
    pub max_sentence_len: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub commitment_weight: f64,
    /// Token budget per training batch; sentences are bucketed by length.
    pub batch_tokens: usize,
    pub ema_decay: f64,
    pub ema_epsilon: f64,
    /// Use expected soft counts instead of hard assignments for EMA statistics.
    pub soft_ema: bool,
    /// Standard deviation of the noise added to codes seeded from head vectors.
    pub codebook_init_noise: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 320,
            ff_dim: 512,
            layers: 3,
            attn_heads: 4,
            sentence_heads: 8,
            vocab_size: 32_000,
            codebook_size: 1024,
            soft_samples: 30,
            lr: 1e-3,
            lr_decay: 0.9,
            warmup_epochs: 4,
            epochs: 20,
            use_positional_encodings: false,
            max_sentence_len: crate::corpus::DEFAULT_MAX_SENTENCE_LEN,
            dropout: 0.1,
            clip_norm: 1.0,
            commitment_weight: 1.0,
            batch_tokens: 256,
            ema_decay: DEFAULT_EMA_DECAY,
            ema_epsilon: DEFAULT_EMA_EPSILON,
            soft_ema: false,
            codebook_init_noise: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.dim == 0 || self.sentence_heads == 0 || self.attn_heads == 0 {
            return fail("dim, sentence_heads and attn_heads must be positive".into());
        }
        if self.dim % self.sentence_heads != 0 {
            return fail(format!(
                "dim {} is not divisible by sentence_heads {}",
                self.dim, self.sentence_heads
            ));
        }
        if self.dim % self.attn_heads != 0 {
            return fail(format!("dim {} is not divisible by attn_heads {}", self.dim, self.attn_heads));
        }
        if self.soft_samples == 0 {
            return fail("soft_samples must be at least 1".into());
        }
        if self.codebook_size < self.sentence_heads {
            return fail(format!(
                "codebook_size {} is smaller than sentence_heads {}",
                self.codebook_size, self.sentence_heads
            ));
        }
        if self.layers == 0 || self.ff_dim == 0 {
            return fail("layers and ff_dim must be positive".into());
        }
        if self.vocab_size <= crate::corpus::NUM_SPECIALS {
            return fail(format!("vocab_size {} is too small", self.vocab_size));
        }
        if self.epochs == 0 || self.warmup_epochs > self.epochs {
            return fail(format!(
                "need epochs >= 1 and warmup_epochs <= epochs (got {} and {})",
                self.epochs, self.warmup_epochs
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) || self.ema_epsilon <= 0.0 {
            return fail("ema_decay must be in (0, 1) and ema_epsilon positive".into());
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr must be positive and lr_decay in (0, 1]".into());
        }
        if self.max_sentence_len == 0 || self.batch_tokens == 0 {
            return fail("max_sentence_len and batch_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.sentence_heads
    }
}

/// `H` head vectors of dimension `D` for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadEncoding {
    heads: usize,
    dim: usize,
    data: Vec<f32>,
}

impl MultiHeadEncoding {
    pub fn new(heads: usize, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(heads * dim, data.len(), "encoding shape mismatch");
        Self { heads, dim, data }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self, h: usize) -> &[f32] {
        &self.data[h * self.dim..(h + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Trained (or freshly initialized) model with its tokenizer and codebook.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamStore<f32>,
    pub network: Network,
    pub codebook: Codebook,
    /// Whether the codebook has been seeded from head vectors yet.
    pub codebook_ready: bool,
    pub step: u64,
    /// `usage[k * H + h]` from the last training epoch.
    pub code_head_usage: Vec<u64>,
}

impl TrainedModel {
    /// Randomly initialized model. `config.vocab_size` is taken from the
    /// tokenizer.
    pub fn new(mut config: ModelConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.vocab_size = tokenizer.vocab_size();
        config.max_sentence_len = tokenizer.max_sentence_len();
        config.validate()?;
        let mut rng: SeededRng = derive_rng(seed, "model-init");
        let mut params = ParamStore::new();
        let network = Network::init(&config, &mut params, &mut rng);
        let codebook = Codebook::zeros(config.codebook_size, config.dim, config.ema_decay, config.ema_epsilon);
        let usage = vec![0; config.codebook_size * config.sentence_heads];
        Ok(Self {
            config,
            tokenizer,
            params,
            network,
            codebook,
            codebook_ready: false,
            step: 0,
            code_head_usage: usage,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(ModelError::Input("empty token sequence".into()));
        }
        if ids.len() > self.config.max_sentence_len {
            return Err(ModelError::Input(format!(
                "sequence of {} tokens exceeds max_sentence_len {}",
                ids.len(),
                self.config.max_sentence_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::Input(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Multi-head encoding of a token sequence (no dropout).
    pub fn encode(&self, ids: &[u32]) -> Result<MultiHeadEncoding> {
        self.check_ids(ids)?;
        let mut tape = Tape::new(&self.params);
        let heads = self.network.encode_heads(&mut tape, ids, None);
        Ok(MultiHeadEncoding::new(
            self.config.sentence_heads,
            self.config.dim,
            tape.value(heads).to_vec(),
        ))
    }

    pub fn encode_text(&self, text: &str) -> Result<MultiHeadEncoding> {
        let enc = self.tokenizer.encode(text);
        self.encode(&enc.ids)
    }

    /// Encodes many sentences in parallel; output order matches input order.
    pub fn encode_batch(&self, batch: &[&[u32]]) -> Result<Vec<MultiHeadEncoding>> {
        batch.par_iter().map(|ids| self.encode(ids)).collect()
    }

    /// Negative log-likelihood (summed over tokens) of reconstructing
    /// `target_ids` from the given head vectors (one `D`-vector per head).
    pub fn reconstruct_loss(&self, heads: &[Vec<f32>], target_ids: &[u32]) -> Result<f64> {
        self.check_ids(target_ids)?;
        if heads.len() != self.config.sentence_heads || heads.iter().any(|h| h.len() != self.config.dim) {
            return Err(ModelError::Input(format!(
                "expected {} head vectors of dimension {}",
                self.config.sentence_heads, self.config.dim
            )));
        }
        let mut tape = Tape::new(&self.params);
        let mem = tape.constant(crate::autograd::Tensor::from_vec(
            self.config.sentence_heads,
            self.config.dim,
            heads.concat(),
        ));
        let loss = self
            .network
            .reconstruction_loss(&mut tape, mem, target_ids, None);
        Ok(tape.scalar(loss) as f64)
    }
}
