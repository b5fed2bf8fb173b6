//! Unsupervised extractive opinion summarization with a quantized transformer.
//!
//! A transformer autoencoder encodes every review sentence into `H` head
//! vectors, each quantized against a shared codebook learned with EMA
//! updates. Codes act as clusters of paraphrases; summaries are built from
//! sentences near the most popular codes, and aspect summaries restrict the
//! codes to those of the head whose codes best separate aspect query terms.

pub mod aspect;
pub mod autograd;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod extraction;
pub mod model;
pub mod quantizer;
pub mod sampling;
pub mod synthetic;

pub use aspect::{AspectCodeMap, AspectConfig};
pub use config::RunConfig;
pub use corpus::{load_reviews, ReviewCorpus, Tokenizer};
pub use extraction::{ExtractionConfig, Method, Scope, Summary};
pub use model::{ModelConfig, MultiHeadEncoding, TrainedModel};
pub use quantizer::{AssignmentTable, Codebook};
