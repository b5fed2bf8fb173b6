use std::path::Path;

use qt_core::corpus::{load_reviews, Tokenizer};
use qt_core::extraction::{summarize_entity, ExtractionConfig};
use qt_core::model::{load_checkpoint, save_checkpoint, train, ModelConfig, TrainedModel};

fn toy_model() -> (TrainedModel, qt_core::ReviewCorpus, qt_core::model::TrainingLog) {
    let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy_reviews.jsonl"));
    let corpus = load_reviews(path).unwrap();
    let tok = Tokenizer::train(corpus.texts(), 128, 64).unwrap();
    let cfg = ModelConfig {
        dim: 32,
        ff_dim: 64,
        layers: 1,
        attn_heads: 4,
        sentence_heads: 4,
        codebook_size: 32,
        soft_samples: 10,
        batch_tokens: 64,
        ..ModelConfig::default()
    };
    let mut model = TrainedModel::new(cfg, tok, 0).unwrap();
    let log = train(&mut model, &corpus, 0).unwrap();
    (model, corpus, log)
}

#[test]
fn toy_training_mostly_decreases_loss_and_reloads_exactly() {
    let (model, corpus, log) = toy_model();
    let losses: Vec<f64> = log.epochs.iter().map(|e| e.loss).collect();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down >= 15, "non-increasing in {down} of {} transitions: {losses:?}", losses.len() - 1);
    assert!(log.head_purity >= 0.99);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.qtckpt");
    save_checkpoint(&model, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(reloaded.codebook.embeddings(), model.codebook.embeddings());
    let cfg = ExtractionConfig::default();
    for entity in &corpus.entities {
        let a = summarize_entity(&model, entity, &cfg).unwrap();
        let b = summarize_entity(&reloaded, entity, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
