//! Aspect-specific summarization from query terms, without retraining.
//!
//! Each code gets a distribution over aspects from query-term frequencies in
//! held-out sentences assigned to it. The head whose codes have the lowest
//! mean aspect entropy is the aspect head; its codes are labelled with their
//! most likely aspect, and aspect summaries sample only from the codes with
//! the requested label.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::words;
use crate::extraction::{EncodedEntity, ExtractionConfig, ExtractionError, Scope, Summary};
use crate::quantizer::{AssignmentTable, Codebook};

pub const TERMS_PER_ASPECT: usize = 5;

#[derive(Debug, Error)]
pub enum AspectError {
    #[error("invalid aspect configuration: {0}")]
    Config(String),
    #[error("unknown aspect {name:?}; valid aspects: {}", valid.join(", "))]
    UnknownAspect { name: String, valid: Vec<String> },
    #[error("no query term occurs in the held-out sentences")]
    NoHits,
    #[error("no head has a code with query hits")]
    NoDefinedHead,
    #[error("negative probability {0}")]
    NegativeProbability(f64),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
}

pub type Result<T> = std::result::Result<T, AspectError>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectSpec {
    pub name: String,
    pub terms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectConfig {
    pub aspects: Vec<AspectSpec>,
}

impl AspectConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(json).map_err(|e| AspectError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path)
            .map_err(|e| AspectError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    /// Exactly five lowercase single-word terms per aspect, no term shared
    /// between aspects, unique aspect names.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AspectError::Config(m));
        if self.aspects.is_empty() {
            return bad("no aspects defined".into());
        }
        let mut names = HashSet::new();
        let mut terms = HashSet::new();
        for a in &self.aspects {
            if a.name.is_empty() || !names.insert(a.name.as_str()) {
                return bad(format!("aspect name {:?} is empty or repeated", a.name));
            }
            if a.terms.len() != TERMS_PER_ASPECT {
                return bad(format!("aspect {} has {} terms, expected {TERMS_PER_ASPECT}", a.name, a.terms.len()));
            }
            for t in &a.terms {
                if words(t) != [t.clone()] {
                    return bad(format!("term {t:?} of aspect {} is not a lowercase single word", a.name));
                }
                if !terms.insert(t.as_str()) {
                    return bad(format!("term {t:?} is used by more than one aspect"));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.aspects.iter().map(|a| a.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.aspects
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| AspectError::UnknownAspect {
                name: name.into(),
                valid: self.names(),
            })
    }
}

/// How query-term frequencies are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermCount {
    /// Every occurrence of a term.
    #[default]
    Tokens,
    /// Each sentence contributes at most one hit per term.
    Sentences,
}

/// Query-term hits per aspect for one sentence.
pub fn term_hits(text: &str, aspects: &AspectConfig, mode: TermCount) -> Vec<f64> {
    let toks = words(text);
    aspects
        .aspects
        .iter()
        .map(|a| {
            a.terms
                .iter()
                .map(|t| {
                    let n = toks.iter().filter(|w| *w == t).count();
                    match mode {
                        TermCount::Tokens => n as f64,
                        TermCount::Sentences => (n > 0) as u8 as f64,
                    }
                })
                .sum()
        })
        .collect()
}

/// `P_k(a) = tf(Q_a, k) / Σ_a' tf(Q_a', k)`. A sentence counts towards every
/// distinct code one of its heads is assigned to. Codes without hits get
/// `None`.
pub fn compute_code_aspect_probs(
    table: &AssignmentTable,
    texts: &[&str],
    aspects: &AspectConfig,
    mode: TermCount,
) -> Result<Vec<Option<Vec<f64>>>> {
    assert_eq!(table.num_sentences(), texts.len(), "table and texts disagree");
    let k = table.popularity.len();
    let na = aspects.aspects.len();
    let mut tf = vec![vec![0.0; na]; k];
    let mut per_aspect = vec![0.0; na];
    for (i, text) in texts.iter().enumerate() {
        let hits = term_hits(text, aspects, mode);
        if hits.iter().all(|&h| h == 0.0) {
            continue;
        }
        let codes: BTreeSet<usize> = (0..table.heads).map(|h| table.code(i, h)).collect();
        for c in codes {
            for (t, &h) in tf[c].iter_mut().zip(&hits) {
                *t += h;
            }
        }
        for (p, h) in per_aspect.iter_mut().zip(&hits) {
            *p += h;
        }
    }
    if per_aspect.iter().all(|&h| h == 0.0) {
        return Err(AspectError::NoHits);
    }
    for (a, &h) in aspects.aspects.iter().zip(&per_aspect) {
        if h == 0.0 {
            warn!("aspect {} has no query hits in the held-out set", a.name);
        }
    }
    Ok(tf
        .into_iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            (total > 0.0).then(|| row.into_iter().map(|v| v / total).collect())
        })
        .collect())
}

/// Natural-log entropy, with `0 · ln 0 = 0`.
pub fn aspect_entropy(p: &[f64]) -> Result<f64> {
    let mut h = 0.0;
    for &v in p {
        if v < 0.0 {
            return Err(AspectError::NegativeProbability(v));
        }
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    Ok(h)
}

/// Head with the lowest mean entropy; heads without defined codes (`None`)
/// are skipped and the lowest index wins ties.
pub fn select_aspect_head(per_head_mean_entropy: &[Option<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (h, m) in per_head_mean_entropy.iter().enumerate() {
        match m {
            None => warn!("head {h} has no code with query hits; excluded"),
            Some(m) if best.map_or(true, |(_, b)| *m < b) => best = Some((h, *m)),
            Some(_) => {}
        }
    }
    best.map(|(h, _)| h).ok_or(AspectError::NoDefinedHead)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeAspectEntry {
    pub code: usize,
    /// Heads that assign to this code in the held-out set.
    pub heads: Vec<usize>,
    pub probabilities: Option<Vec<f64>>,
    pub entropy: Option<f64>,
    pub aspect: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectCodeMap {
    pub aspects: Vec<String>,
    pub aspect_head: usize,
    pub per_head_mean_entropy: Vec<Option<f64>>,
    pub codes: Vec<CodeAspectEntry>,
}

impl AspectCodeMap {
    /// Builds the map from held-out sentences and their assignments.
    pub fn build(table: &AssignmentTable, texts: &[&str], aspects: &AspectConfig, mode: TermCount) -> Result<Self> {
        aspects.validate()?;
        let probs = compute_code_aspect_probs(table, texts, aspects, mode)?;
        let usage = table.code_head_usage();
        let heads = table.heads;
        let entropies: Vec<Option<f64>> = probs
            .iter()
            .map(|p| p.as_ref().map(|p| aspect_entropy(p)).transpose())
            .collect::<Result<_>>()?;
        let head_sets: Vec<Vec<usize>> = (0..probs.len())
            .map(|k| (0..heads).filter(|&h| usage[k * heads + h] > 0).collect())
            .collect();
        let per_head_mean_entropy: Vec<Option<f64>> = (0..heads)
            .map(|h| {
                let vals: Vec<f64> = (0..probs.len())
                    .filter(|&k| head_sets[k].contains(&h))
                    .filter_map(|k| entropies[k])
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        let aspect_head = select_aspect_head(&per_head_mean_entropy)?;
        let names = aspects.names();
        let codes = probs
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                let aspect = match &p {
                    Some(p) if head_sets[k].contains(&aspect_head) => Some(names[argmax(p)].clone()),
                    _ => None,
                };
                CodeAspectEntry {
                    code: k,
                    heads: head_sets[k].clone(),
                    entropy: entropies[k],
                    probabilities: p,
                    aspect,
                }
            })
            .collect();
        Ok(Self {
            aspects: names,
            aspect_head,
            per_head_mean_entropy,
            codes,
        })
    }

    /// `K_a`: aspect-head codes whose most likely aspect is `name`.
    pub fn codes_for(&self, name: &str) -> Result<Vec<usize>> {
        if !self.aspects.iter().any(|a| a == name) {
            return Err(AspectError::UnknownAspect {
                name: name.into(),
                valid: self.aspects.clone(),
            });
        }
        Ok(self
            .codes
            .iter()
            .filter(|c| c.aspect.as_deref() == Some(name))
            .map(|c| c.code)
            .collect())
    }

    /// Union of all `K_a`.
    pub fn mapped_codes(&self) -> Vec<usize> {
        self.codes.iter().filter(|c| c.aspect.is_some()).map(|c| c.code).collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Aspect summary of one entity: cluster sampling restricted to `K_a`, with
/// popularity renormalized over those codes and the aspect word budget.
pub fn aspect_summarize(
    entity: &EncodedEntity,
    cb: &Codebook,
    map: &AspectCodeMap,
    aspect: &str,
    cfg: &ExtractionConfig,
) -> Result<Summary> {
    let codes = map.codes_for(aspect)?;
    if codes.is_empty() {
        return Err(ExtractionError::NoAspectSignal(aspect.into()).into());
    }
    Ok(entity.summarize(cb, cfg, Scope::Aspect(aspect.into()), Some(&codes))?)
}
