use std::path::{Path, PathBuf};

use qt_core::corpus::{load_reviews, Tokenizer};
use qt_core::model::{save_checkpoint, train, ModelConfig, TrainedModel};
use qt_core::ReviewCorpus;

pub fn toy_corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/toy_reviews.jsonl")
}

/// A briefly trained toy model saved under `dir`.
pub fn toy_checkpoint(dir: &Path) -> (PathBuf, TrainedModel, ReviewCorpus) {
    let corpus = load_reviews(toy_corpus_path()).unwrap();
    let tok = Tokenizer::train(corpus.texts(), 128, 64).unwrap();
    let cfg = ModelConfig {
        dim: 32,
        ff_dim: 64,
        layers: 1,
        sentence_heads: 2,
        codebook_size: 16,
        soft_samples: 5,
        batch_tokens: 64,
        epochs: 3,
        warmup_epochs: 1,
        ..ModelConfig::default()
    };
    let mut model = TrainedModel::new(cfg, tok, 1).unwrap();
    train(&mut model, &corpus, 1).unwrap();
    let path = dir.join("toy.qtckpt");
    save_checkpoint(&model, &path).unwrap();
    (path, model, corpus)
}
