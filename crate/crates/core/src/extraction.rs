//! Popularity-based sentence ranking and budgeted summary assembly.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntityRecord, SentenceRef, TextEncoder};
use crate::eval::words;
use crate::model::{ModelError, MultiHeadEncoding, TrainedModel};
use crate::quantizer::{hard_assign, AssignmentTable, Codebook, QuantizerError};
use crate::sampling::{derive_rng, softmax, Categorical, SeededRng};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("entity has no sentences")]
    EmptyEntity,
    #[error("invalid extraction configuration: {0}")]
    Config(String),
    #[error("no aspect signal for {0:?}: none of the aspect head's codes map to it")]
    NoAspectSignal(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
}

pub type Result<T> = std::result::Result<T, ExtractionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nearest,
    TwoStep,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nearest => "nearest",
            Method::TwoStep => "two_step",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nearest" => Ok(Method::Nearest),
            "two_step" | "two-step" => Ok(Method::TwoStep),
            other => Err(format!("unknown method {other:?} (expected nearest or two_step)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub method: Method,
    pub cluster_samples: usize,
    pub sentences_per_cluster: usize,
    pub word_budget: usize,
    pub aspect_word_budget: usize,
    pub redundancy_threshold: f64,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            method: Method::TwoStep,
            cluster_samples: 300,
            sentences_per_cluster: 30,
            word_budget: 100,
            aspect_word_budget: 75,
            redundancy_threshold: 0.6,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_samples == 0 || self.sentences_per_cluster == 0 {
            return Err(ExtractionError::Config(
                "cluster_samples and sentences_per_cluster must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.redundancy_threshold) {
            return Err(ExtractionError::Config(format!(
                "redundancy_threshold {} outside [0, 1]",
                self.redundancy_threshold
            )));
        }
        if self.word_budget == 0 || self.aspect_word_budget == 0 {
            return Err(ExtractionError::Config("word budgets must be positive".into()));
        }
        Ok(())
    }
}

/// Sentences in rank order with their scores: vote counts for two-step
/// sampling, coupled cluster size for the nearest method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRanking {
    pub order: Vec<usize>,
    /// Indexed by sentence.
    pub scores: Vec<u64>,
    pub total_votes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scope {
    General,
    Aspect(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::General => f.write_str("general"),
            Scope::Aspect(a) => write!(f, "aspect({a})"),
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "general" {
            return Ok(Scope::General);
        }
        s.strip_prefix("aspect(")
            .and_then(|r| r.strip_suffix(')'))
            .filter(|a| !a.is_empty())
            .map(|a| Scope::Aspect(a.to_string()))
            .ok_or_else(|| format!("invalid scope {s:?}"))
    }
}

impl Serialize for Scope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entity_id: String,
    pub scope: Scope,
    pub sentences: Vec<String>,
    pub word_count: usize,
    pub method: Method,
    pub seed: u64,
    /// Positions of the selected sentences in the entity's sentence order.
    #[serde(skip)]
    pub indices: Vec<usize>,
}

impl Summary {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

fn check_inputs(table: &AssignmentTable, encodings: &[MultiHeadEncoding]) -> Result<()> {
    if encodings.is_empty() || table.num_sentences() == 0 {
        return Err(ExtractionError::EmptyEntity);
    }
    assert_eq!(table.num_sentences(), encodings.len(), "table and encodings disagree");
    Ok(())
}

/// `min_h ‖x_ih − e_k‖²` for every sentence `i`.
pub fn min_head_distances(encodings: &[MultiHeadEncoding], cb: &Codebook, k: usize) -> Vec<f64> {
    let e = cb.embedding(k);
    encodings
        .iter()
        .map(|x| {
            (0..x.heads())
                .map(|h| {
                    x.head(h)
                        .iter()
                        .zip(e)
                        .map(|(&a, &b)| {
                            let d = a as f64 - b as f64;
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn allowed_codes(table: &AssignmentTable, allowed: Option<&[usize]>) -> Vec<usize> {
    match allowed {
        Some(a) => a.to_vec(),
        None => (0..table.popularity.len()).collect(),
    }
}

/// Couples every populated code with its nearest sentence and ranks the
/// coupled sentences by the size of their cluster. A sentence coupled to
/// several codes is ranked once, by its largest cluster. Sentences that no
/// code couples to are not ranked.
pub fn rank_nearest(
    table: &AssignmentTable,
    encodings: &[MultiHeadEncoding],
    cb: &Codebook,
    allowed: Option<&[usize]>,
) -> Result<SentenceRanking> {
    check_inputs(table, encodings)?;
    let n = encodings.len();
    let mut best: Vec<Option<(u64, f64)>> = vec![None; n];
    for k in allowed_codes(table, allowed) {
        let size = table.popularity[k];
        if size == 0 {
            continue;
        }
        let dists = min_head_distances(encodings, cb, k);
        let (i, d) = dists
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &d)| if d < acc.1 { (i, d) } else { acc });
        let slot = &mut best[i];
        match slot {
            Some((s, sd)) if *s > size || (*s == size && *sd <= d) => {}
            _ => *slot = Some((size, d)),
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| best[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (sa, da) = best[a].unwrap();
        let (sb, db) = best[b].unwrap();
        sb.cmp(&sa).then(da.total_cmp(&db)).then(a.cmp(&b))
    });
    let scores: Vec<u64> = best.iter().map(|b| b.map_or(0, |(s, _)| s)).collect();
    let total_votes = scores.iter().sum();
    Ok(SentenceRanking {
        order,
        scores,
        total_votes,
    })
}

/// Popularity-weighted code distribution, restricted to `allowed` when
/// given. If no allowed code is populated the distribution is uniform over
/// the allowed codes.
fn code_distribution(table: &AssignmentTable, allowed: Option<&[usize]>) -> Vec<(usize, f64)> {
    let codes = allowed_codes(table, allowed);
    let total: u64 = codes.iter().map(|&k| table.popularity[k]).sum();
    if total == 0 {
        let p = 1.0 / codes.len().max(1) as f64;
        return codes.into_iter().map(|k| (k, p)).collect();
    }
    codes
        .into_iter()
        .filter(|&k| table.popularity[k] > 0)
        .map(|k| (k, table.popularity[k] as f64 / total as f64))
        .collect()
}

fn sentence_distribution(encodings: &[MultiHeadEncoding], cb: &Codebook, k: usize) -> Vec<f64> {
    let logits: Vec<f64> = min_head_distances(encodings, cb, k).into_iter().map(|d| -d).collect();
    softmax(&logits)
}

/// Exact per-draw probability of each sentence under two-step sampling:
/// `Σ_k P(z = k) · softmax(−min_h d²(x_i, e_k))_i`.
pub fn two_step_distribution(
    table: &AssignmentTable,
    encodings: &[MultiHeadEncoding],
    cb: &Codebook,
    allowed: Option<&[usize]>,
) -> Vec<f64> {
    let mut out = vec![0.0; encodings.len()];
    for (k, pk) in code_distribution(table, allowed) {
        for (o, p) in out.iter_mut().zip(sentence_distribution(encodings, cb, k)) {
            *o += pk * p;
        }
    }
    out
}

/// Repeats `cluster_samples` times: draw a code with probability
/// proportional to its popularity, then draw `sentences_per_cluster`
/// sentences with probability `softmax(−min_h ‖x_ih − e_z‖²)`. Sentences are
/// ranked by votes, then by smaller mean head-to-assigned-code distance, then
/// by position. Sentences without votes are not ranked.
pub fn rank_two_step(
    table: &AssignmentTable,
    encodings: &[MultiHeadEncoding],
    cb: &Codebook,
    cfg: &ExtractionConfig,
    rng: &mut SeededRng,
    allowed: Option<&[usize]>,
) -> Result<SentenceRanking> {
    check_inputs(table, encodings)?;
    cfg.validate()?;
    let n = encodings.len();
    let dist = code_distribution(table, allowed);
    let code_pick = Categorical::from_weights(&dist.iter().map(|&(_, p)| p).collect::<Vec<_>>())
        .ok_or(ExtractionError::Config("no codes to sample from".into()))?;
    let mut per_code: Vec<Option<Categorical>> = vec![None; dist.len()];
    let mut votes = vec![0u64; n];
    for _ in 0..cfg.cluster_samples {
        let c = code_pick.sample(rng);
        let sampler = per_code[c].get_or_insert_with(|| {
            Categorical::from_weights(&sentence_distribution(encodings, cb, dist[c].0))
                .expect("softmax is a valid distribution")
        });
        for _ in 0..cfg.sentences_per_cluster {
            votes[sampler.sample(rng)] += 1;
        }
    }
    let mean_dist: Vec<f64> = (0..n)
        .map(|i| (0..table.heads).map(|h| table.assignments[i * table.heads + h].1).sum::<f64>() / table.heads as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| votes[i] > 0).collect();
    order.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then(mean_dist[a].total_cmp(&mean_dist[b]))
            .then(a.cmp(&b))
    });
    let total_votes = votes.iter().sum();
    Ok(SentenceRanking {
        order,
        scores: votes,
        total_votes,
    })
}

/// Share of the candidate's word types that already occur in the summary.
pub fn unigram_overlap(candidate: &str, selected: &HashSet<String>) -> f64 {
    let types: HashSet<String> = words(candidate).into_iter().collect();
    if types.is_empty() {
        return 1.0;
    }
    types.iter().filter(|t| selected.contains(*t)).count() as f64 / types.len() as f64
}

/// Walks the ranking, skipping sentences whose overlap with the summary so
/// far exceeds `threshold`, and stops before the first sentence that would
/// push the word count over `budget` (once at least one sentence is in).
pub fn build_summary(
    ranking: &SentenceRanking,
    texts: &[&str],
    budget: usize,
    threshold: f64,
) -> (Vec<usize>, usize) {
    let mut chosen = Vec::new();
    let mut seen_types: HashSet<String> = HashSet::new();
    let mut count = 0;
    for &i in &ranking.order {
        let text = texts[i];
        if !chosen.is_empty() && unigram_overlap(text, &seen_types) > threshold {
            continue;
        }
        let len = text.split_whitespace().count();
        if !chosen.is_empty() && count + len > budget {
            break;
        }
        chosen.push(i);
        count += len;
        seen_types.extend(words(text));
    }
    (chosen, count)
}

/// Sentence texts and encodings of one entity, in review order.
pub struct EncodedEntity {
    pub entity_id: String,
    pub refs: Vec<SentenceRef>,
    pub texts: Vec<String>,
    pub encodings: Vec<MultiHeadEncoding>,
    pub table: AssignmentTable,
}

impl EncodedEntity {
    pub fn new(model: &TrainedModel, entity: &EntityRecord) -> Result<Self> {
        let mut refs = Vec::new();
        let mut texts = Vec::new();
        let mut ids = Vec::new();
        for (r, s) in entity.sentences() {
            let enc = model.tokenizer.encode(&s.text);
            if enc.ids.is_empty() {
                continue;
            }
            refs.push(r);
            texts.push(s.text.clone());
            ids.push(enc.ids);
        }
        if ids.is_empty() {
            return Err(ExtractionError::EmptyEntity);
        }
        let batch: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
        let encodings = model.encode_batch(&batch)?;
        let table = hard_assign(&model.codebook, &encodings)?;
        Ok(Self {
            entity_id: entity.entity_id.clone(),
            refs,
            texts,
            encodings,
            table,
        })
    }

    /// Ranks and assembles a summary. `allowed` restricts cluster sampling
    /// (or coupling) to a code subset; the generator stream is derived from
    /// the seed, entity id and scope.
    pub fn summarize(
        &self,
        cb: &Codebook,
        cfg: &ExtractionConfig,
        scope: Scope,
        allowed: Option<&[usize]>,
    ) -> Result<Summary> {
        cfg.validate()?;
        let ranking = match cfg.method {
            Method::Nearest => rank_nearest(&self.table, &self.encodings, cb, allowed)?,
            Method::TwoStep => {
                let mut rng = derive_rng(cfg.seed, &format!("{}\u{1f}{}", self.entity_id, scope));
                rank_two_step(&self.table, &self.encodings, cb, cfg, &mut rng, allowed)?
            }
        };
        let budget = match scope {
            Scope::General => cfg.word_budget,
            Scope::Aspect(_) => cfg.aspect_word_budget,
        };
        let texts: Vec<&str> = self.texts.iter().map(String::as_str).collect();
        let (indices, word_count) = build_summary(&ranking, &texts, budget, cfg.redundancy_threshold);
        Ok(Summary {
            entity_id: self.entity_id.clone(),
            scope,
            sentences: indices.iter().map(|&i| self.texts[i].clone()).collect(),
            word_count,
            method: cfg.method,
            seed: cfg.seed,
            indices,
        })
    }
}

/// General summary of one entity.
pub fn summarize_entity(model: &TrainedModel, entity: &EntityRecord, cfg: &ExtractionConfig) -> Result<Summary> {
    EncodedEntity::new(model, entity)?.summarize(&model.codebook, cfg, Scope::General, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::rng_from_seed;
    use proptest::prelude::*;

    fn enc(rows: &[&[f32]]) -> MultiHeadEncoding {
        let dim = rows[0].len();
        MultiHeadEncoding::new(rows.len(), dim, rows.concat())
    }

    fn cb(rows: &[&[f32]]) -> Codebook {
        Codebook::from_embeddings(rows.len(), rows[0].len(), rows.concat(), 0.99, 1e-5)
    }

    fn ranking(order: Vec<usize>) -> SentenceRanking {
        let n = order.len();
        SentenceRanking {
            order,
            scores: vec![0; n],
            total_votes: 0,
        }
    }

    #[test]
    fn budget_stops_before_overflow() {
        let forty = |w: &str| vec![w; 40].join(" ");
        let texts = [forty("a"), forty("b"), forty("c")];
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let (chosen, count) = build_summary(&ranking(vec![0, 1, 2]), &refs, 100, 0.6);
        assert_eq!((chosen, count), (vec![0, 1], 80));
    }

    #[test]
    fn first_sentence_is_kept_even_over_budget() {
        let long = vec!["w"; 150].join(" ");
        let (chosen, count) = build_summary(&ranking(vec![0]), &[long.as_str()], 100, 0.6);
        assert_eq!((chosen, count), (vec![0], 150));
    }

    #[test]
    fn redundancy_filter() {
        let texts = ["the room was clean", "the room was clean", "great breakfast"];
        let (chosen, _) = build_summary(&ranking(vec![0, 1, 2]), &texts, 100, 0.6);
        assert_eq!(chosen, vec![0, 2]);
        // 7 of 10 types already present
        let selected: HashSet<String> = "a b c d e f g".split(' ').map(String::from).collect();
        let cand = "a b c d e f g h i j";
        assert!((unigram_overlap(cand, &selected) - 0.7).abs() < 1e-12);
        let texts = ["a b c d e f g", cand];
        let (chosen, _) = build_summary(&ranking(vec![0, 1]), &texts, 100, 0.6);
        assert_eq!(chosen, vec![0]);
    }

    #[test]
    fn single_sentence_gets_every_vote() {
        let e = vec![enc(&[&[0.0, 0.0], &[1.0, 1.0]])];
        let c = cb(&[&[0.0, 0.0], &[5.0, 5.0]]);
        let table = hard_assign(&c, &e).unwrap();
        let cfg = ExtractionConfig::default();
        let r = rank_two_step(&table, &e, &c, &cfg, &mut rng_from_seed(1), None).unwrap();
        assert_eq!(r.scores, vec![300 * 30]);
        let r = rank_nearest(&table, &e, &c, None).unwrap();
        assert_eq!(r.order, vec![0]);
    }

    #[test]
    fn nearest_ranks_each_sentence_once_by_largest_cluster() {
        // sentence 0 sits on codes 0 and 1; code 1 is more popular
        let e = vec![
            enc(&[&[0.0, 0.0], &[1.0, 0.0]]),
            enc(&[&[1.1, 0.0], &[1.2, 0.0]]),
            enc(&[&[5.0, 5.0], &[5.0, 5.1]]),
        ];
        let c = cb(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
        let table = hard_assign(&c, &e).unwrap();
        assert_eq!(table.popularity, vec![1, 3, 2]);
        let r = rank_nearest(&table, &e, &c, None).unwrap();
        assert_eq!(r.order, vec![0, 2]);
        assert_eq!(r.scores, vec![3, 0, 2]);
    }

    #[test]
    fn empty_entity_is_an_error() {
        let table = AssignmentTable {
            heads: 1,
            assignments: vec![],
            popularity: vec![0],
        };
        let c = cb(&[&[0.0]]);
        assert!(matches!(rank_nearest(&table, &[], &c, None), Err(ExtractionError::EmptyEntity)));
    }

    #[test]
    fn scope_round_trips_through_strings() {
        for s in [Scope::General, Scope::Aspect("location".into())] {
            assert_eq!(s.to_string().parse::<Scope>().unwrap(), s);
        }
        assert_eq!(Scope::Aspect("rooms".into()).to_string(), "aspect(rooms)");
        assert!("aspect()".parse::<Scope>().is_err());
    }

    #[test]
    fn uniform_distances_give_uniform_distribution() {
        let e: Vec<_> = (0..4).map(|_| enc(&[&[1.0, 0.0]])).collect();
        let c = cb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let table = hard_assign(&c, &e).unwrap();
        let p = two_step_distribution(&table, &e, &c, None);
        for v in p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn votes_are_conserved(samples in 1usize..50, n in 1usize..20, seed in any::<u64>()) {
            let e = vec![enc(&[&[0.0, 0.0]]), enc(&[&[1.0, 0.0]]), enc(&[&[0.0, 2.0]])];
            let c = cb(&[&[0.0, 0.0], &[1.0, 1.0]]);
            let table = hard_assign(&c, &e).unwrap();
            let cfg = ExtractionConfig { cluster_samples: samples, sentences_per_cluster: n, ..Default::default() };
            let r = rank_two_step(&table, &e, &c, &cfg, &mut rng_from_seed(seed), None).unwrap();
            prop_assert_eq!(r.total_votes, (samples * n) as u64);
            prop_assert_eq!(r.scores.iter().sum::<u64>(), (samples * n) as u64);
        }

        #[test]
        fn summaries_never_repeat_sentences(order in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), budget in 1usize..40) {
            let texts = ["a b", "c d e", "a b", "f", "g h i j", "k", "c d e", "l m"];
            let (chosen, count) = build_summary(&ranking(order), &texts, budget, 0.6);
            let set: HashSet<_> = chosen.iter().collect();
            prop_assert_eq!(set.len(), chosen.len());
            let last = texts[*chosen.last().unwrap()].split(' ').count();
            prop_assert!(count <= budget + last);
        }
    }
}
