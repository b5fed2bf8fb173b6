//! Byte-pair-encoding subword tokenizer trained on the review corpus.
//!
//! Words are whitespace delimited. Each word starts with the marker `▁`, so a
//! whole-word token looks like `▁room`. Merges are learned greedily by pair
//! frequency with ties broken by the lexicographic order of the pair, which
//! makes training deterministic.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize_whitespace, CorpusError, ReviewCorpus};

pub const SNT: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const PAD: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_SPECIALS: usize = 5;

pub const DEFAULT_MAX_SENTENCE_LEN: usize = 64;
pub const MIN_VOCAB_SIZE: usize = 64;
/// Upper bound on vocabulary size; token ids are `u32` and embeddings are
/// allocated densely.
pub const MAX_VOCAB_SIZE: usize = 1 << 20;

const WORD_MARK: &str = "\u{2581}";
const SPECIAL_TOKENS: [(&str, &str, u32); NUM_SPECIALS] = [
    ("SNT", "<snt>", SNT),
    ("BOS", "<s>", BOS),
    ("EOS", "</s>", EOS),
    ("PAD", "<pad>", PAD),
    ("UNK", "<unk>", UNK),
];

/// Result of encoding one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub truncated: bool,
}

impl Encoding {
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Text to token-id mapping used by the model. Alternative segmenters (for
/// example a unigram language model) implement this trait.
pub trait TextEncoder {
    fn encode(&self, text: &str) -> Encoding;
    fn decode(&self, ids: &[u32]) -> String;
    fn vocab_size(&self) -> usize;
    fn max_sentence_len(&self) -> usize;
    /// Stable digest of everything that influences encoding.
    fn fingerprint(&self) -> String;
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(String, String), usize>,
    max_sentence_len: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    vocab: BTreeMap<String, u32>,
    merges: Vec<String>,
    specials: BTreeMap<String, u32>,
    max_sentence_len: usize,
}

impl PartialEq for Tokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.id_to_token == other.id_to_token
            && self.merges == other.merges
            && self.max_sentence_len == other.max_sentence_len
    }
}

/// Learns a vocabulary of exactly `vocab_size` entries from the corpus.
pub fn build_tokenizer(corpus: &ReviewCorpus, vocab_size: usize) -> Result<Tokenizer, CorpusError> {
    Tokenizer::train(corpus.texts(), vocab_size, DEFAULT_MAX_SENTENCE_LEN)
}

impl Tokenizer {
    pub fn train<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        vocab_size: usize,
        max_sentence_len: usize,
    ) -> Result<Self, CorpusError> {
        if vocab_size < MIN_VOCAB_SIZE {
            return Err(CorpusError::Config(format!(
                "vocab_size must be at least {MIN_VOCAB_SIZE}, got {vocab_size}"
            )));
        }
        if vocab_size > MAX_VOCAB_SIZE {
            return Err(CorpusError::Config(format!(
                "vocab_size {vocab_size} exceeds the supported maximum {MAX_VOCAB_SIZE}"
            )));
        }
        if max_sentence_len == 0 {
            return Err(CorpusError::Config("max_sentence_len must be positive".into()));
        }
        let mut word_counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *word_counts.entry(w.to_string()).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(CorpusError::Config("cannot build a vocabulary from an empty corpus".into()));
        }

        // Character inventory, most frequent first; the word marker always stays.
        let mut char_counts: HashMap<String, u64> = HashMap::new();
        for (w, &c) in &word_counts {
            for ch in w.chars() {
                *char_counts.entry(ch.to_string()).or_default() += c;
            }
        }
        let mut chars: Vec<(String, u64)> = char_counts
            .into_iter()
            .filter(|(c, _)| c != WORD_MARK)
            .collect();
        chars.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = vocab_size - NUM_SPECIALS - 1;
        chars.truncate(room);
        chars.sort_by(|a, b| a.0.cmp(&b.0));

        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|(_, t, _)| t.to_string()).collect();
        id_to_token.push(WORD_MARK.to_string());
        id_to_token.extend(chars.into_iter().map(|(c, _)| c));

        let merges = learn_merges(&word_counts, &mut id_to_token, vocab_size);

        let mut pad_idx = 0;
        while id_to_token.len() < vocab_size {
            id_to_token.push(format!("<unused_{pad_idx}>"));
            pad_idx += 1;
        }
        if pad_idx > 0 {
            log::info!("vocabulary saturated; {pad_idx} reserved slots left unused");
        }
        Ok(Self::from_parts(id_to_token, merges, max_sentence_len))
    }

    fn from_parts(id_to_token: Vec<String>, merges: Vec<(String, String)>, max_sentence_len: usize) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Self {
            id_to_token,
            token_to_id,
            merges,
            merge_ranks,
            max_sentence_len,
        }
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Id of the token covering the whole word, if the vocabulary has one.
    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.token_id(&format!("{WORD_MARK}{word}"))
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut symbols: Vec<String> = std::iter::once(WORD_MARK.to_string())
            .chain(word.chars().map(|c| c.to_string()))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == l && &symbols[i + 1] == r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        out.extend(
            symbols
                .iter()
                .map(|s| self.token_to_id.get(s).copied().unwrap_or(UNK)),
        );
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            vocab: self
                .id_to_token
                .iter()
                .enumerate()
                .map(|(i, t)| (t.clone(), i as u32))
                .collect(),
            merges: self.merges.iter().map(|(a, b)| format!("{a} {b}")).collect(),
            specials: SPECIAL_TOKENS
                .iter()
                .map(|(name, _, id)| (name.to_string(), *id))
                .collect(),
            max_sentence_len: self.max_sentence_len,
        };
        serde_json::to_string_pretty(&file).expect("tokenizer serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, CorpusError> {
        let bad = |m: String| CorpusError::Parse { line: 0, message: m };
        let file: TokenizerFile = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
        let mut id_to_token = vec![String::new(); file.vocab.len()];
        for (tok, id) in file.vocab {
            let slot = id_to_token
                .get_mut(id as usize)
                .ok_or_else(|| bad(format!("token id {id} outside vocabulary")))?;
            if !slot.is_empty() {
                return Err(bad(format!("token id {id} assigned twice")));
            }
            *slot = tok;
        }
        for (name, tok, id) in SPECIAL_TOKENS {
            if file.specials.get(name) != Some(&id) || id_to_token.get(id as usize).map(String::as_str) != Some(tok) {
                return Err(bad(format!("special token {name} must be {tok:?} with id {id}")));
            }
        }
        let merges = file
            .merges
            .iter()
            .map(|m| {
                m.split_once(' ')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| bad(format!("malformed merge {m:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_parts(id_to_token, merges, file.max_sentence_len))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&json)
    }
}

impl TextEncoder for Tokenizer {
    fn encode(&self, text: &str) -> Encoding {
        let text = normalize_whitespace(text);
        let mut ids = Vec::new();
        for w in text.split(' ').filter(|w| !w.is_empty()) {
            self.encode_word(w, &mut ids);
            if ids.len() > self.max_sentence_len {
                break;
            }
        }
        let truncated = ids.len() > self.max_sentence_len;
        ids.truncate(self.max_sentence_len);
        Encoding { ids, truncated }
    }

    fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                SNT | BOS | EOS | PAD => {}
                _ => s.push_str(self.token(id).unwrap_or("<unk>")),
            }
        }
        s.replace(WORD_MARK, " ").trim().to_string()
    }

    fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    fn max_sentence_len(&self) -> usize {
        self.max_sentence_len
    }

    fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

type Pair = (u32, u32);

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    key: Reverse<(String, String)>,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Incremental BPE: pair counts are updated only for words touched by a
/// merge, with a lazily invalidated max-heap.
fn learn_merges(
    word_counts: &HashMap<String, u64>,
    vocab: &mut Vec<String>,
    vocab_size: usize,
) -> Vec<(String, String)> {
    let mut sym_id: HashMap<String, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as u32))
        .collect();
    let mut sorted_words: Vec<(&String, &u64)> = word_counts.iter().collect();
    sorted_words.sort();
    let mut words: Vec<(Vec<u32>, u64)> = sorted_words
        .into_iter()
        .map(|(w, &c)| {
            let syms = std::iter::once(WORD_MARK.to_string())
                .chain(w.chars().map(|ch| ch.to_string()))
                .map(|s| sym_id.get(&s).copied().unwrap_or(UNK))
                .collect();
            (syms, c)
        })
        .collect();

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut pair_words: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            if pair.0 == UNK || pair.1 == UNK {
                continue;
            }
            *pair_counts.entry(pair).or_default() += c;
            pair_words.entry(pair).or_default().insert(wi);
        }
    }
    let key = |vocab: &Vec<String>, p: Pair| Reverse((vocab[p.0 as usize].clone(), vocab[p.1 as usize].clone()));
    let mut heap: BinaryHeap<Candidate> = pair_counts
        .iter()
        .map(|(&pair, &count)| Candidate {
            count,
            key: key(vocab, pair),
            pair,
        })
        .collect();

    let mut merges = Vec::new();
    while vocab.len() < vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 {
            continue;
        }
        if current != top.count {
            heap.push(Candidate {
                count: current,
                ..top
            });
            continue;
        }
        let (l, r) = top.pair;
        let merged_str = format!("{}{}", vocab[l as usize], vocab[r as usize]);
        // The same surface can be reachable through another split; reuse its
        // id. Surfaces that spell a special token are never merged.
        let new_id = match sym_id.get(&merged_str) {
            Some(&id) if (id as usize) < NUM_SPECIALS => {
                pair_counts.remove(&top.pair);
                continue;
            }
            Some(&id) => id,
            None => {
                let id = vocab.len() as u32;
                vocab.push(merged_str.clone());
                sym_id.insert(merged_str, id);
                id
            }
        };
        merges.push((vocab[l as usize].clone(), vocab[r as usize].clone()));

        let mut affected: Vec<usize> = pair_words
            .remove(&top.pair)
            .unwrap_or_default()
            .into_iter()
            .collect();
        affected.sort_unstable();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let (syms, c) = &mut words[wi];
            let c = *c;
            for p in syms.windows(2) {
                let pair = (p[0], p[1]);
                if let Some(v) = pair_counts.get_mut(&pair) {
                    *v = v.saturating_sub(c);
                }
                touched.insert(pair);
            }
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            *syms = next;
            for p in syms.windows(2) {
                let pair = (p[0], p[1]);
                if pair.0 == UNK || pair.1 == UNK {
                    continue;
                }
                *pair_counts.entry(pair).or_default() += c;
                pair_words.entry(pair).or_default().insert(wi);
                touched.insert(pair);
            }
        }
        pair_counts.remove(&top.pair);
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            if let Some(&count) = pair_counts.get(&pair) {
                if count > 0 {
                    heap.push(Candidate {
                        count,
                        key: key(vocab, pair),
                        pair,
                    });
                }
            }
        }
    }
    merges
}
