//! ROUGE-1/2/L F-scores with max-over-references aggregation.
//!
//! Text is lowercased, every character that is neither alphanumeric nor
//! whitespace is replaced by a space, and the result is split on whitespace.
//! No stemming or stopword removal is applied, so absolute numbers are not
//! comparable to toolkits that stem.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};

/// Lowercased word tokens with punctuation removed.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, system: usize, reference: usize) -> Self {
        let precision = if system == 0 { 0.0 } else { overlap as f64 / system as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(system: &str, reference: &str, n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be positive");
    let sys = words(system);
    let refs = words(reference);
    if refs.is_empty() {
        warn!("empty reference; scoring 0");
        return RougeScore::default();
    }
    let s = ngram_counts(&sys, n);
    let r = ngram_counts(&refs, n);
    let overlap: usize = s.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    RougeScore::from_counts(overlap, sys.len().saturating_sub(n - 1), refs.len().saturating_sub(n - 1))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L over the whole text as one sequence.
pub fn rouge_l(system: &str, reference: &str) -> RougeScore {
    let sys = words(system);
    let refs = words(reference);
    if refs.is_empty() {
        warn!("empty reference; scoring 0");
        return RougeScore::default();
    }
    RougeScore::from_counts(lcs_len(&sys, &refs), sys.len(), refs.len())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
}

/// Best F1 per metric over the references (each metric maximized
/// independently).
pub fn score_against(system: &str, references: &[String]) -> RougeTriple {
    let mut best = RougeTriple::default();
    for r in references {
        best.rouge1 = best.rouge1.max(rouge_n(system, r, 1).f1);
        best.rouge2 = best.rouge2.max(rouge_n(system, r, 2).f1);
        best.rouge_l = best.rouge_l.max(rouge_l(system, r).f1);
    }
    best
}

/// One line of a reference file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSet {
    pub entity_id: String,
    #[serde(default = "general_scope")]
    pub scope: String,
    pub references: Vec<String>,
}

fn general_scope() -> String {
    "general".into()
}

/// A system summary reduced to what evaluation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemText {
    pub entity_id: String,
    pub scope: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityScore {
    pub entity_id: String,
    pub scope: String,
    #[serde(flatten)]
    pub scores: RougeTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entities: Vec<EntityScore>,
    pub corpus: RougeTriple,
    /// `entity_id/scope` keys of system summaries without references.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .entities
            .iter()
            .map(|e| e.entity_id.len() + e.scope.len() + 1)
            .max()
            .unwrap_or(0)
            .max(6);
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}", "entity", "R1", "R2", "RL");
        for e in &self.entities {
            let key = format!("{}/{}", e.entity_id, e.scope);
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}",
                key, e.scores.rouge1, e.scores.rouge2, e.scores.rouge_l
            );
        }
        let c = &self.corpus;
        let _ = writeln!(out, "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}", "mean", c.rouge1, c.rouge2, c.rouge_l);
        out
    }
}

/// Scores every system summary that has references (matched on entity id and
/// scope) and averages over entities. Returns `None` when nothing aligns.
pub fn evaluate_corpus(system: &[SystemText], references: &[ReferenceSet]) -> Option<EvalReport> {
    let mut refs: BTreeMap<(&str, &str), Vec<String>> = BTreeMap::new();
    for r in references {
        refs.entry((r.entity_id.as_str(), r.scope.as_str()))
            .or_default()
            .extend(r.references.iter().cloned());
    }
    let mut entities = Vec::new();
    let mut skipped = Vec::new();
    let mut sorted: Vec<&SystemText> = system.iter().collect();
    sorted.sort_by(|a, b| (&a.entity_id, &a.scope).cmp(&(&b.entity_id, &b.scope)));
    for s in sorted {
        match refs.get(&(s.entity_id.as_str(), s.scope.as_str())) {
            Some(r) if !r.is_empty() => entities.push(EntityScore {
                entity_id: s.entity_id.clone(),
                scope: s.scope.clone(),
                scores: score_against(&s.text, r),
            }),
            _ => {
                warn!("no references for {}/{}; skipped", s.entity_id, s.scope);
                skipped.push(format!("{}/{}", s.entity_id, s.scope));
            }
        }
    }
    if entities.is_empty() {
        return None;
    }
    let n = entities.len() as f64;
    let corpus = RougeTriple {
        rouge1: entities.iter().map(|e| e.scores.rouge1).sum::<f64>() / n,
        rouge2: entities.iter().map(|e| e.scores.rouge2).sum::<f64>() / n,
        rouge_l: entities.iter().map(|e| e.scores.rouge_l).sum::<f64>() / n,
    };
    Some(EvalReport {
        entities,
        corpus,
        skipped,
    })
}

/// Reads a reference JSONL file (one [`ReferenceSet`] per line).
pub fn read_references(reader: impl BufRead) -> Result<Vec<ReferenceSet>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
