//! Review corpora: loading, persistence, tokenization and entity-level splits.

mod tokenizer;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::rng_from_seed;

pub use tokenizer::{
    build_tokenizer, Encoding, TextEncoder, Tokenizer, BOS, DEFAULT_MAX_SENTENCE_LEN, EOS,
    NUM_SPECIALS, PAD, SNT, UNK,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sentence_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub sentences: Vec<SentenceRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub reviews: Vec<ReviewRecord>,
}

/// Location of a sentence inside an [`EntityRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceRef {
    pub review: usize,
    pub sentence: usize,
}

impl EntityRecord {
    /// All sentences in review order.
    pub fn sentences(&self) -> impl Iterator<Item = (SentenceRef, &SentenceRecord)> {
        self.reviews.iter().enumerate().flat_map(|(r, review)| {
            review.sentences.iter().enumerate().map(move |(s, rec)| {
                (
                    SentenceRef {
                        review: r,
                        sentence: s,
                    },
                    rec,
                )
            })
        })
    }

    pub fn sentence(&self, at: SentenceRef) -> &SentenceRecord {
        &self.reviews[at.review].sentences[at.sentence]
    }

    pub fn num_sentences(&self) -> usize {
        self.reviews.iter().map(|r| r.sentences.len()).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReviewCorpus {
    pub domain_name: String,
    pub entities: Vec<EntityRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewLine {
    entity_id: String,
    review_id: String,
    sentences: Vec<String>,
}

#[derive(Serialize)]
struct ReviewLineOut<'a> {
    entity_id: &'a str,
    review_id: &'a str,
    sentences: Vec<&'a str>,
}

/// Collapses runs of whitespace to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Loads a JSONL review file, one review per line.
pub fn load_reviews(path: impl AsRef<Path>) -> Result<ReviewCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let domain = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ReviewCorpus::from_reader(BufReader::new(file), domain).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

impl ReviewCorpus {
    pub fn from_reader(reader: impl BufRead, domain_name: impl Into<String>) -> Result<Self> {
        let mut entities: Vec<EntityRecord> = Vec::new();
        let mut entity_pos: HashMap<String, usize> = HashMap::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|source| CorpusError::Io {
                path: PathBuf::new(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReviewLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if !seen.insert((parsed.entity_id.clone(), parsed.review_id.clone())) {
                return Err(CorpusError::Integrity(format!(
                    "duplicate review_id {:?} for entity {:?} (line {lineno})",
                    parsed.review_id, parsed.entity_id
                )));
            }
            let sentences: Vec<SentenceRecord> = parsed
                .sentences
                .iter()
                .map(|s| normalize_whitespace(s))
                .filter(|s| !s.is_empty())
                .enumerate()
                .map(|(i, text)| SentenceRecord {
                    sentence_index: i,
                    text,
                    token_ids: Vec::new(),
                })
                .collect();
            if sentences.is_empty() {
                log::warn!(
                    "line {lineno}: review {:?} of entity {:?} has no sentences",
                    parsed.review_id,
                    parsed.entity_id
                );
            }
            let review = ReviewRecord {
                review_id: parsed.review_id,
                sentences,
            };
            let pos = *entity_pos.entry(parsed.entity_id.clone()).or_insert_with(|| {
                entities.push(EntityRecord {
                    entity_id: parsed.entity_id,
                    reviews: Vec::new(),
                });
                entities.len() - 1
            });
            entities[pos].reviews.push(review);
        }
        Ok(Self {
            domain_name: domain_name.into(),
            entities,
        })
    }

    pub fn write_jsonl(&self, writer: impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        for e in &self.entities {
            for r in &e.reviews {
                let line = ReviewLineOut {
                    entity_id: &e.entity_id,
                    review_id: &r.review_id,
                    sentences: r.sentences.iter().map(|s| s.text.as_str()).collect(),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let f = File::create(path).map_err(io_err)?;
        self.write_jsonl(f).map_err(io_err)
    }

    pub fn num_sentences(&self) -> usize {
        self.entities.iter().map(EntityRecord::num_sentences).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_sentences() == 0
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.iter().find(|e| e.entity_id == id)
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entities
            .iter()
            .flat_map(|e| e.sentences().map(|(_, s)| s.text.as_str()))
    }

    /// Fills `token_ids` for every sentence. Sentences that tokenize to
    /// nothing are dropped and the survivors re-indexed.
    pub fn tokenize_with(&mut self, tok: &impl TextEncoder) {
        for e in &mut self.entities {
            for r in &mut e.reviews {
                let mut kept = Vec::with_capacity(r.sentences.len());
                for mut s in r.sentences.drain(..) {
                    let enc = tok.encode(&s.text);
                    if enc.ids.is_empty() {
                        continue;
                    }
                    s.token_ids = enc.ids;
                    s.sentence_index = kept.len();
                    kept.push(s);
                }
                r.sentences = kept;
            }
        }
    }
}

/// Partitions entities into train and dev sets. No entity straddles the split.
pub fn split_corpus(
    corpus: &ReviewCorpus,
    dev_fraction: f64,
    seed: u64,
) -> Result<(ReviewCorpus, ReviewCorpus)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(CorpusError::Split(format!(
            "dev_fraction must be in (0, 1), got {dev_fraction}"
        )));
    }
    let n = corpus.entities.len();
    if n < 2 {
        return Err(CorpusError::Split(format!(
            "need at least 2 entities to split, corpus has {n}"
        )));
    }
    let n_dev = ((n as f64 * dev_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let dev_set: HashSet<usize> = order[..n_dev].iter().copied().collect();
    let pick = |dev: bool| ReviewCorpus {
        domain_name: corpus.domain_name.clone(),
        entities: corpus
            .entities
            .iter()
            .enumerate()
            .filter(|(i, _)| dev_set.contains(i) == dev)
            .map(|(_, e)| e.clone())
            .collect(),
    };
    Ok((pick(false), pick(true)))
}
