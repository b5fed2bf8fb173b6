use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGrads, ParamStore, Tape, Tensor};
use crate::corpus::{ReviewCorpus, TextEncoder};
use crate::quantizer::{hard_assign, Codebook};
use crate::sampling::{derive_rng, SeededRng};

use super::{Dropout, ModelError, MultiHeadEncoding, Network, Result, TrainedModel};

/// Sentences per gradient accumulation chunk. Chunks are reduced in a fixed
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 4;

/// Per-epoch training statistics (means over sentences).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    pub quantized: bool,
    pub lr: f64,
    pub batches: usize,
    /// Codes that received at least one hard assignment this epoch.
    pub active_codes: usize,
    pub reseeded_codes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    /// Fraction of assignments that go to their code's majority head, measured
    /// on the training sentences after the last epoch.
    pub head_purity: f64,
}

struct Adam {
    m: ParamGrads<f32>,
    v: ParamGrads<f32>,
    t: i32,
}

impl Adam {
    fn new(store: &ParamStore<f32>) -> Self {
        Self {
            m: ParamGrads::zeros_like(store),
            v: ParamGrads::zeros_like(store),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamStore<f32>, grads: &ParamGrads<f32>, lr: f64, b1: f64, b2: f64, eps: f64) {
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = grads.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            let v = self.v.get_mut(id);
            let p = params.get_mut(id).data_mut();
            for i in 0..g.len() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p[i] -= update as f32;
            }
        }
    }
}

struct SentenceOutcome {
    reconstruction: f64,
    commitment: f64,
    heads: Vec<f32>,
    /// Per head: sampled codes (soft) or empty during warm-up.
    samples: Vec<Vec<usize>>,
}

struct ChunkOutcome {
    grads: ParamGrads<f32>,
    sentences: Vec<SentenceOutcome>,
}

fn sentence_step(
    network: &Network,
    params: &ParamStore<f32>,
    codebook: Option<&Codebook>,
    ids: &[u32],
    cfg: &super::ModelConfig,
    rng: &mut SeededRng,
    grads: &mut ParamGrads<f32>,
    scale: f32,
) -> Result<SentenceOutcome> {
    let (h, d) = (cfg.sentence_heads, cfg.dim);
    let mut tape = Tape::new(params);
    let mut drop_rng = SeededRng::from_rng(&mut *rng).expect("chacha from chacha");
    let mut dropout = Dropout { rng: &mut drop_rng, p: cfg.dropout };
    let heads = network.encode_heads(&mut tape, ids, Some(&mut dropout));
    let head_values = tape.value(heads).to_vec();
    let (loss, rec, com, samples) = match codebook {
        None => {
            let rec = network.reconstruction_loss(&mut tape, heads, ids, Some(&mut dropout));
            (rec, tape.scalar(rec) as f64, 0.0, Vec::new())
        }
        Some(cb) => {
            let mut q = Vec::with_capacity(h * d);
            let mut samples = Vec::with_capacity(h);
            for hh in 0..h {
                let soft = cb.soft_assign(&head_values[hh * d..(hh + 1) * d], cfg.soft_samples, rng)?;
                q.extend_from_slice(&soft.quantized);
                samples.push(soft.codes);
            }
            let q = tape.constant(Tensor::from_vec(h, d, q));
            let memory = tape.straight_through(heads, q);
            let rec = network.reconstruction_loss(&mut tape, memory, ids, Some(&mut dropout));
            let com = tape.row_distance(heads, q);
            let loss = tape.weighted_sum(&[(rec, 1.0), (com, cfg.commitment_weight as f32)]);
            (loss, tape.scalar(rec) as f64, tape.scalar(com) as f64, samples)
        }
    };
    let scaled = tape.scale(loss, scale);
    tape.backward(scaled).accumulate_params(&tape, grads);
    Ok(SentenceOutcome {
        reconstruction: rec,
        commitment: com,
        heads: head_values,
        samples,
    })
}

/// Groups sentence indices into length-bucketed batches of at most
/// `budget` tokens (at least one sentence each), in shuffled order.
fn make_batches(lengths: &[usize], budget: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for i in order {
        if !current.is_empty() && tokens + lengths[i] > budget {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        tokens += lengths[i];
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches.shuffle(rng);
    batches
}

/// Trains `model` on every sentence of `corpus` using `model.config`.
///
/// The first `warmup_epochs` epochs train a plain autoencoder over the head
/// vectors. Afterwards each head is replaced (forward only) by the mean of
/// `soft_samples` codes drawn from `softmax(-‖x - e_k‖²)`, the encoder is
/// pulled towards the quantized vectors by the commitment term, and the
/// codebook follows hard assignments through EMA updates.
///
/// Results are a pure function of the model state, corpus and `seed`.
pub fn train(model: &mut TrainedModel, corpus: &ReviewCorpus, seed: u64) -> Result<TrainingLog> {
    let cfg = model.config.clone();
    cfg.validate()?;
    let sentences: Vec<Vec<u32>> = corpus
        .texts()
        .map(|t| model.tokenizer.encode(t).ids)
        .filter(|ids| !ids.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(ModelError::Input("training corpus has no sentences".into()));
    }
    let lengths: Vec<usize> = sentences.iter().map(|s| s.len() + 1).collect();
    let mut rng = derive_rng(seed, "train");
    let mut adam = Adam::new(&model.params);
    let mut log = TrainingLog::default();
    let (h, d, k) = (cfg.sentence_heads, cfg.dim, cfg.codebook_size);
    info!(
        "training on {} sentences, {} parameters, {} epochs",
        sentences.len(),
        model.num_parameters(),
        cfg.epochs
    );

    for epoch in 0..cfg.epochs {
        let quantized = epoch >= cfg.warmup_epochs;
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let batches = make_batches(&lengths, cfg.batch_tokens, &mut rng);
        let mut sum_rec = 0.0;
        let mut sum_com = 0.0;
        let mut epoch_hits = vec![0u64; k];
        let mut recent: Vec<f32> = Vec::new();

        if quantized && !model.codebook_ready {
            seed_codebook(model, &sentences, &mut rng)?;
        }

        for (b, batch) in batches.iter().enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let chunk_seeds: Vec<u64> = batch.chunks(CHUNK).map(|_| rng.gen()).collect();
            let codebook = quantized.then_some(&model.codebook);
            let outcomes: Vec<Result<ChunkOutcome>> = batch
                .par_chunks(CHUNK)
                .zip(chunk_seeds.par_iter())
                .map(|(chunk, &s)| {
                    let mut chunk_rng = derive_rng(s, "chunk");
                    let mut grads = ParamGrads::zeros_like(&model.params);
                    let mut out = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        out.push(sentence_step(
                            &model.network,
                            &model.params,
                            codebook,
                            &sentences[i],
                            &cfg,
                            &mut chunk_rng,
                            &mut grads,
                            scale,
                        )?);
                    }
                    Ok(ChunkOutcome { grads, sentences: out })
                })
                .collect();

            let mut grads = ParamGrads::zeros_like(&model.params);
            let mut batch_outcomes = Vec::with_capacity(batch.len());
            for o in outcomes {
                let o = o?;
                grads.add_assign(&o.grads);
                batch_outcomes.extend(o.sentences);
            }
            let batch_loss: f64 = batch_outcomes
                .iter()
                .map(|o| o.reconstruction + cfg.commitment_weight * o.commitment)
                .sum();
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::NonFinite {
                    step: model.step,
                    epoch,
                    batch: b,
                });
            }
            let norm = grads.norm() as f64;
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                grads.scale((cfg.clip_norm / norm) as f32);
            }
            adam.step(&mut model.params, &grads, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            model.step += 1;

            for o in &batch_outcomes {
                sum_rec += o.reconstruction;
                sum_com += o.commitment;
            }
            if quantized {
                update_codebook(model, &batch_outcomes, &mut epoch_hits)?;
                recent.clear();
                for o in &batch_outcomes {
                    recent.extend_from_slice(&o.heads);
                }
            }
        }

        let n = sentences.len() as f64;
        let mut reseeded = 0;
        let active = epoch_hits.iter().filter(|&&c| c > 0).count();
        if quantized && epoch + 1 < cfg.epochs && !recent.is_empty() {
            let pool: Vec<&[f32]> = recent.chunks(d).collect();
            for (code, &hits) in epoch_hits.iter().enumerate() {
                if hits == 0 {
                    let pick = pool[rng.gen_range(0..pool.len())];
                    model.codebook.set_code(code, pick);
                    reseeded += 1;
                }
            }
            if reseeded > 0 {
                debug!("epoch {epoch}: reseeded {reseeded} unused codes");
            }
        }
        let stats = EpochStats {
            epoch,
            loss: (sum_rec + cfg.commitment_weight * sum_com) / n,
            reconstruction: sum_rec / n,
            commitment: sum_com / n,
            quantized,
            lr,
            batches: batches.len(),
            active_codes: if quantized { active } else { 0 },
            reseeded_codes: reseeded,
        };
        info!(
            "epoch {:>3}  loss {:.4}  rec {:.4}  commit {:.4}  codes {}",
            epoch, stats.loss, stats.reconstruction, stats.commitment, stats.active_codes
        );
        log.epochs.push(stats);
    }

    if model.codebook_ready {
        let refs: Vec<&[u32]> = sentences.iter().map(Vec::as_slice).collect();
        let encodings = model.encode_batch(&refs)?;
        let table = hard_assign(&model.codebook, &encodings)?;
        model.code_head_usage = table.code_head_usage();
    }
    log.head_purity = crate::quantizer::head_purity(&model.code_head_usage, h);
    Ok(log)
}

/// Initializes the codebook from head vectors of a random sample of training
/// sentences, so that every code starts near real data.
fn seed_codebook(model: &mut TrainedModel, sentences: &[Vec<u32>], rng: &mut SeededRng) -> Result<()> {
    let cfg = &model.config;
    let want = (2 * cfg.codebook_size).div_ceil(cfg.sentence_heads).max(1);
    let sample: Vec<&[u32]> = sentences
        .choose_multiple(rng, want.min(sentences.len()))
        .map(Vec::as_slice)
        .collect();
    let encodings: Vec<MultiHeadEncoding> = model.encode_batch(&sample)?;
    let pool: Vec<&[f32]> = encodings
        .iter()
        .flat_map(|e| (0..e.heads()).map(move |h| e.head(h)))
        .collect();
    let noise = cfg.codebook_init_noise;
    model.codebook.init_from_vectors(&pool, noise, rng);
    model.codebook_ready = true;
    Ok(())
}

fn update_codebook(model: &mut TrainedModel, outcomes: &[SentenceOutcome], hits: &mut [u64]) -> Result<()> {
    let (h, d) = (model.config.sentence_heads, model.config.dim);
    if model.config.soft_ema {
        let m = model.config.soft_samples as f64;
        let mut batch: Vec<(&[f32], usize, f64)> = Vec::new();
        for o in outcomes {
            for hh in 0..h {
                let x = &o.heads[hh * d..(hh + 1) * d];
                let mut counts = std::collections::BTreeMap::new();
                for &c in &o.samples[hh] {
                    *counts.entry(c).or_insert(0usize) += 1;
                }
                for (c, n) in counts {
                    batch.push((x, c, n as f64 / m));
                }
                hits[model.codebook.nearest(x).0] += 1;
            }
        }
        model.codebook.ema_update_weighted(&batch)?;
    } else {
        let mut batch: Vec<(&[f32], usize)> = Vec::with_capacity(outcomes.len() * h);
        for o in outcomes {
            for hh in 0..h {
                let x = &o.heads[hh * d..(hh + 1) * d];
                let code = model.codebook.nearest(x).0;
                hits[code] += 1;
                batch.push((x, code));
            }
        }
        model.codebook.ema_update(&batch)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tokenizer;
    use crate::model::ModelConfig;
    use crate::sampling::rng_from_seed;

    fn corpus(lines: &[&str]) -> ReviewCorpus {
        let jsonl: String = lines
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{{\"entity_id\":\"e\",\"review_id\":\"r{i}\",\"sentences\":[\"{s}\"]}}\n"))
            .collect();
        ReviewCorpus::from_reader(jsonl.as_bytes(), "test").unwrap()
    }

    fn config() -> ModelConfig {
        ModelConfig {
            dim: 16,
            ff_dim: 32,
            layers: 1,
            attn_heads: 2,
            sentence_heads: 4,
            codebook_size: 8,
            soft_samples: 5,
            dropout: 0.0,
            epochs: 3,
            warmup_epochs: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn batches_respect_token_budget_and_cover_all() {
        let lengths = vec![3, 9, 4, 4, 12, 1, 7];
        let batches = make_batches(&lengths, 10, &mut rng_from_seed(0));
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        for b in &batches {
            let total: usize = b.iter().map(|&i| lengths[i]).sum();
            assert!(b.len() == 1 || total <= 10);
        }
    }

    #[test]
    fn warmup_epochs_have_no_commitment() {
        let c = corpus(&["the room was clean", "the staff was friendly", "great location"]);
        let tok = Tokenizer::train(c.texts(), 64, 64).unwrap();
        let mut model = TrainedModel::new(config(), tok, 1).unwrap();
        let log = train(&mut model, &c, 1).unwrap();
        assert_eq!(log.epochs[0].commitment, 0.0);
        assert!(!log.epochs[0].quantized);
        assert!(log.epochs[1].quantized && log.epochs[1].commitment > 0.0);
        assert!(model.codebook_ready);
        assert_eq!(model.code_head_usage.iter().sum::<u64>(), 3 * 4);
    }

    #[test]
    fn training_is_reproducible() {
        let c = corpus(&["the room was clean", "the staff was friendly"]);
        let tok = Tokenizer::train(c.texts(), 64, 64).unwrap();
        let run = || {
            let mut m = TrainedModel::new(config(), tok.clone(), 5).unwrap();
            let log = train(&mut m, &c, 9).unwrap();
            (m.params.iter().map(|(_, _, t)| t.data().to_vec()).collect::<Vec<_>>(), m.codebook, log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn overfits_a_single_sentence() {
        let c = corpus(&["the staff was very friendly and helpful"]);
        let tok = Tokenizer::train(c.texts(), 64, 64).unwrap();
        let cfg = ModelConfig {
            dim: 32,
            ff_dim: 64,
            epochs: 200,
            warmup_epochs: 200,
            lr_decay: 1.0,
            ..config()
        };
        let mut m = TrainedModel::new(cfg, tok, 2).unwrap();
        let log = train(&mut m, &c, 2).unwrap();
        let last = log.epochs.last().unwrap().reconstruction;
        assert!(last < 0.1, "loss after 200 steps: {last}");
    }
}
