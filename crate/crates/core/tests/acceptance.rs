//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use qt_core::aspect::{aspect_entropy, aspect_summarize, select_aspect_head, AspectCodeMap, TermCount};
use qt_core::corpus::{load_reviews, Tokenizer};
use qt_core::extraction::{rank_two_step, EncodedEntity, ExtractionConfig, Method, Scope};
use qt_core::model::{gradient_check, train, ModelConfig, MultiHeadEncoding, TrainedModel, TrainingLog};
use qt_core::quantizer::{hard_assign, AssignmentTable, Codebook};
use qt_core::sampling::rng_from_seed;
use qt_core::synthetic::{
    planted_aspect_config, planted_aspect_corpus, planted_aspect_head_table, planted_popularity_corpus,
    LabeledCorpus,
};
use qt_core::RunConfig;
use rand::Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn toy_corpus_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/toy_reviews.jsonl"))
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        dim: 32,
        ff_dim: 64,
        layers: 1,
        attn_heads: 4,
        sentence_heads: 4,
        codebook_size: 32,
        soft_samples: 10,
        batch_tokens: 64,
        ..ModelConfig::default()
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn quantizer_exactness() -> Outcome {
    let mut rng = rng_from_seed(1);
    let (k, d, heads, n) = (64, 16, 4, 50);
    let codes: Vec<f32> = (0..k).flat_map(|_| random_vec(&mut rng, d)).collect();
    let cb = Codebook::from_embeddings(k, d, codes.clone(), 0.99, 1e-5);
    let encs: Vec<MultiHeadEncoding> = (0..n)
        .map(|_| MultiHeadEncoding::new(heads, d, random_vec(&mut rng, heads * d)))
        .collect();
    let table = hard_assign(&cb, &encs).unwrap();
    let mut agree = 0;
    for (i, e) in encs.iter().enumerate() {
        for h in 0..heads {
            let x = e.head(h);
            let mut best = 0;
            for j in 1..k {
                if sq_dist(x, &codes[j * d..(j + 1) * d]) < sq_dist(x, &codes[best * d..(best + 1) * d]) {
                    best = j;
                }
            }
            agree += usize::from(table.code(i, h) == best);
        }
    }
    outcome(agree == n * heads, format!("{agree}/{} assignments match brute force", n * heads))
}

fn soft_em_distribution() -> Outcome {
    let mut rng = rng_from_seed(2);
    let d = 4;
    let codes: Vec<f32> = (0..8).flat_map(|_| random_vec(&mut rng, d)).collect();
    let cb = Codebook::from_embeddings(8, d, codes.clone(), 0.99, 1e-5);
    let x = random_vec(&mut rng, d);
    let expected = softmax_oracle(&(0..8).map(|k| -sq_dist(&x, &codes[k * d..(k + 1) * d])).collect::<Vec<_>>());
    let mut counts = [0f64; 8];
    let (calls, m) = (1000, 100);
    for _ in 0..calls {
        for c in cb.soft_assign(&x, m, &mut rng).unwrap().codes {
            counts[c] += 1.0;
        }
    }
    let empirical: Vec<f64> = counts.iter().map(|c| c / (calls * m) as f64).collect();
    let tv = total_variation(&empirical, &expected);
    outcome(tv <= 0.01, format!("TV {tv:.4} over {} draws", calls * m))
}

fn ema_convergence() -> Outcome {
    let means = [[1.0f32, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]];
    let noise = Normal::new(0.0f32, 0.05).unwrap();
    let mut converged = 0;
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = rng_from_seed(100 + seed);
        let mut sample = |rng: &mut qt_core::sampling::SeededRng| {
            let m = means[rng.gen_range(0..4)];
            vec![m[0] + noise.sample(rng), m[1] + noise.sample(rng)]
        };
        let pool: Vec<Vec<f32>> = (0..64).map(|_| sample(&mut rng)).collect();
        let refs: Vec<&[f32]> = pool.iter().map(Vec::as_slice).collect();
        let mut cb = Codebook::zeros(4, 2, 0.99, 1e-5);
        cb.init_from_vectors(&refs, 0.0, &mut rng);
        for _ in 0..2000 {
            let batch: Vec<Vec<f32>> = (0..16).map(|_| sample(&mut rng)).collect();
            let assigned: Vec<(&[f32], usize)> = batch.iter().map(|x| (x.as_slice(), cb.nearest(x).0)).collect();
            cb.ema_update(&assigned).unwrap();
        }
        let mut used = [false; 4];
        let mut ok = true;
        for m in &means {
            let (k, d2) = cb.nearest(m);
            worst = worst.max(d2.sqrt());
            ok &= d2.sqrt() < 0.1 && !used[k];
            used[k] = true;
        }
        converged += usize::from(ok);
    }
    outcome(converged == 10, format!("{converged}/10 seeds, worst centroid error {worst:.4}"))
}

fn gradient_fidelity() -> Outcome {
    let cfg = ModelConfig {
        dim: 8,
        ff_dim: 12,
        layers: 1,
        attn_heads: 2,
        sentence_heads: 2,
        codebook_size: 4,
        soft_samples: 3,
        vocab_size: 12,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let r = gradient_check(&cfg, 1e-4, 7).unwrap();
    outcome(
        r.max_rel_error < 1e-3 && r.codebook_grad_max_abs == 0.0,
        format!(
            "max relative error {:.2e}, codebook gradient {}",
            r.max_rel_error, r.codebook_grad_max_abs
        ),
    )
}

fn training_progress() -> (Outcome, Option<TrainingLog>) {
    let corpus = load_reviews(toy_corpus_path()).unwrap();
    let tok = Tokenizer::train(corpus.texts(), 128, 64).unwrap();
    let mut model = TrainedModel::new(toy_config(), tok, 0).unwrap();
    let log = train(&mut model, &corpus, 0).unwrap();
    let first = log.epochs.first().unwrap().reconstruction;
    let last = log.epochs.last().unwrap().reconstruction;
    let warm = model.config.warmup_epochs;
    let warm_zero = log.epochs[..warm].iter().all(|e| e.commitment == 0.0 && !e.quantized);
    let ratio = last / first;
    (
        outcome(
            ratio <= 0.5 && warm_zero,
            format!(
                "{} sentences, L_r {first:.2} -> {last:.2} (ratio {ratio:.3}), warm-up commitment zero: {warm_zero}",
                corpus.num_sentences()
            ),
        ),
        Some(log),
    )
}

/// Two heads in two dimensions: codes at (0,0), (6,0) and (0,6).
fn figure4_fixture() -> (Codebook, Vec<MultiHeadEncoding>) {
    let codes = vec![0.0, 0.0, 6.0, 0.0, 0.0, 6.0];
    let cb = Codebook::from_embeddings(3, 2, codes, 0.99, 1e-5);
    let rows: [[f32; 4]; 5] = [
        [1.2, 0.0, 6.7, 0.0],
        [6.7, 0.0, 6.0, 0.7],
        [0.0, 7.2, 5.3, 0.0],
        [0.05, 0.0, 0.0, 6.05],
        [0.0, 1.2, 6.0, -0.7],
    ];
    let encs = rows.iter().map(|r| MultiHeadEncoding::new(2, 2, r.to_vec())).collect();
    (cb, encs)
}

/// Exact per-draw sentence probabilities, enumerated from the definition.
fn two_step_oracle(table: &AssignmentTable, encs: &[MultiHeadEncoding], cb: &Codebook) -> Vec<f64> {
    let total: u64 = table.popularity.iter().sum();
    let mut out = vec![0.0; encs.len()];
    for k in 0..cb.size() {
        let pk = table.popularity[k] as f64 / total as f64;
        if pk == 0.0 {
            continue;
        }
        let logits: Vec<f64> = encs
            .iter()
            .map(|e| -(0..e.heads()).map(|h| sq_dist(e.head(h), cb.embedding(k))).fold(f64::INFINITY, f64::min))
            .collect();
        for (o, p) in out.iter_mut().zip(softmax_oracle(&logits)) {
            *o += pk * p;
        }
    }
    out
}

fn two_step_sampling() -> Outcome {
    let (cb, encs) = figure4_fixture();
    let table = hard_assign(&cb, &encs).unwrap();
    let expected = two_step_oracle(&table, &encs, &cb);
    let s4_expected_top = (0..5).all(|i| i == 3 || expected[i] < expected[3]);
    let cfg = ExtractionConfig::default();
    let mut s4_first = 0;
    let mut conserved = true;
    for seed in 0..50u64 {
        let r = rank_two_step(&table, &encs, &cb, &cfg, &mut rng_from_seed(seed), None).unwrap();
        s4_first += usize::from(r.order[0] == 3);
        conserved &= r.total_votes == 300 * 30 && r.scores.iter().sum::<u64>() == 300 * 30;
    }

    let mut rng = rng_from_seed(9);
    let cb6 = Codebook::from_embeddings(4, 2, vec![0.0, 0.0, 1.5, 0.0, 0.0, 1.5, 1.5, 1.5], 0.99, 1e-5);
    let encs6: Vec<MultiHeadEncoding> = (0..6)
        .map(|_| MultiHeadEncoding::new(2, 2, (0..4).map(|_| rng.gen_range(-0.5f32..2.0)).collect()))
        .collect();
    let table6 = hard_assign(&cb6, &encs6).unwrap();
    let oracle = two_step_oracle(&table6, &encs6, &cb6);
    let big = ExtractionConfig {
        cluster_samples: 100_000,
        sentences_per_cluster: 1,
        ..Default::default()
    };
    let r = rank_two_step(&table6, &encs6, &cb6, &big, &mut rng_from_seed(10), None).unwrap();
    let empirical: Vec<f64> = r.scores.iter().map(|&v| v as f64 / 100_000.0).collect();
    let tv = total_variation(&empirical, &oracle);
    outcome(
        s4_expected_top && s4_first >= 48 && tv <= 0.01 && conserved,
        format!("s4 first in {s4_first}/50 seeds, 6-sentence TV {tv:.4}, votes conserved: {conserved}"),
    )
}

/// Fraction of `(seed, entity)` pairs whose top general-summary sentence is
/// from the dominant group, for each method.
struct PopularityRun {
    nearest_seeds: usize,
    two_step_seeds: usize,
    nearest_entities: usize,
    two_step_entities: usize,
    entities: usize,
}

fn popularity_pipeline() -> (Outcome, String) {
    let mut run = PopularityRun {
        nearest_seeds: 0,
        two_step_seeds: 0,
        nearest_entities: 0,
        two_step_entities: 0,
        entities: 0,
    };
    for seed in 0..10u64 {
        let (lc, dominant) = planted_popularity_corpus(seed, 8, 50, 0.4);
        let tok = Tokenizer::train(lc.corpus.texts(), 128, 64).unwrap();
        let cfg = ModelConfig {
            sentence_heads: 1,
            ..toy_config()
        };
        let mut model = TrainedModel::new(cfg, tok, seed).unwrap();
        train(&mut model, &lc.corpus, seed).unwrap();
        let (mut near_ok, mut two_ok) = (0, 0);
        for (e, entity) in lc.corpus.entities.iter().enumerate() {
            let enc = EncodedEntity::new(&model, entity).unwrap();
            for method in [Method::Nearest, Method::TwoStep] {
                let ext = ExtractionConfig {
                    method,
                    seed,
                    ..Default::default()
                };
                let s = enc.summarize(&model.codebook, &ext, Scope::General, None).unwrap();
                let top = lc.label_of(&entity.entity_id, &s.sentences[0]).unwrap();
                if top == dominant[e] {
                    match method {
                        Method::Nearest => near_ok += 1,
                        Method::TwoStep => two_ok += 1,
                    }
                }
            }
        }
        let n = lc.corpus.entities.len();
        run.entities += n;
        run.nearest_entities += near_ok;
        run.two_step_entities += two_ok;
        run.nearest_seeds += usize::from(near_ok == n);
        run.two_step_seeds += usize::from(two_ok == n);
    }
    (
        outcome(
            run.nearest_seeds >= 9,
            format!(
                "nearest coupling: dominant top sentence for every entity in {}/10 seeds ({}/{} entities)",
                run.nearest_seeds, run.nearest_entities, run.entities
            ),
        ),
        format!(
            "two-step sampling: {}/10 seeds, {}/{} entities",
            run.two_step_seeds, run.two_step_entities, run.entities
        ),
    )
}

fn aspect_accuracy(lc: &LabeledCorpus, dev: &LabeledCorpus, seed: u64) -> [(usize, usize); 2] {
    let aspects = planted_aspect_config();
    let tok = Tokenizer::train(lc.corpus.texts(), 128, 64).unwrap();
    let cfg = ModelConfig {
        sentence_heads: 2,
        codebook_size: 64,
        epochs: 40,
        ..toy_config()
    };
    let mut model = TrainedModel::new(cfg, tok, seed).unwrap();
    train(&mut model, &lc.corpus, seed).unwrap();
    let mut texts = Vec::new();
    let mut encs = Vec::new();
    for e in &dev.corpus.entities {
        let enc = EncodedEntity::new(&model, e).unwrap();
        texts.extend(enc.texts);
        encs.extend(enc.encodings);
    }
    let table = hard_assign(&model.codebook, &encs).unwrap();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let map = AspectCodeMap::build(&table, &refs, &aspects, TermCount::Tokens).unwrap();
    let mut counts = [(0, 0); 2];
    for entity in &lc.corpus.entities {
        let enc = EncodedEntity::new(&model, entity).unwrap();
        for (a, name) in aspects.names().iter().enumerate() {
            for (slot, method) in [Method::Nearest, Method::TwoStep].into_iter().enumerate() {
                let ext = ExtractionConfig {
                    method,
                    seed,
                    ..Default::default()
                };
                // an aspect without mapped codes yields no sentences
                let Ok(s) = aspect_summarize(&enc, &model.codebook, &map, name, &ext) else {
                    continue;
                };
                for t in &s.sentences {
                    counts[slot].1 += 1;
                    counts[slot].0 += usize::from(lc.label_of(&entity.entity_id, t) == Some(a));
                }
            }
        }
    }
    counts
}

fn aspect_machinery(toy_log: Option<&TrainingLog>) -> (Outcome, String) {
    let one_hot = aspect_entropy(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let uniform = aspect_entropy(&[1.0 / 6.0; 6]).unwrap();
    let entropy_ok = one_hot == 0.0 && (uniform - 6f64.ln()).abs() <= 1e-9;

    let aspects = planted_aspect_config();
    let mut head_ok = 0;
    for seed in 0..20u64 {
        let (table, texts, planted) = planted_aspect_head_table(seed, 120, 4, 6);
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let map = AspectCodeMap::build(&table, &refs, &aspects, TermCount::Tokens).unwrap();
        let selected = select_aspect_head(&map.per_head_mean_entropy).unwrap();
        head_ok += usize::from(selected == planted && map.aspect_head == planted);
    }

    let mut near = (0, 0);
    let mut two = (0, 0);
    for seed in 0..10u64 {
        let lc = planted_aspect_corpus(seed, 8, 45);
        let dev = planted_aspect_corpus(seed + 1000, 4, 45);
        let [n, t] = aspect_accuracy(&lc, &dev, seed);
        near = (near.0 + n.0, near.1 + n.1);
        two = (two.0 + t.0, two.1 + t.1);
    }
    let accuracy = near.0 as f64 / near.1.max(1) as f64;
    let purity = toy_log.map_or(0.0, |l| l.head_purity);
    (
        outcome(
            entropy_ok && head_ok == 20 && accuracy >= 0.9 && purity >= 0.99,
            format!(
                "entropy fixtures: {entropy_ok}, aspect head recovered 20-of-20: {} ({head_ok}), \
                 nearest aspect accuracy {}/{} = {accuracy:.3}, toy head purity {purity:.3}",
                head_ok == 20,
                near.0,
                near.1
            ),
        ),
        format!(
            "two-step aspect accuracy {}/{} = {:.3}",
            two.0,
            two.1,
            two.0 as f64 / two.1.max(1) as f64
        ),
    )
}

fn lcs_brute_force(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|c| it.any(|d| d == c)) {
            best = sub.len();
        }
    }
    best
}

fn rouge_oracles() -> Outcome {
    use qt_core::eval::{lcs_len, rouge_l, rouge_n};
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let uni = rouge_n("the cat", "the cat sat", 1);
    let lcs = rouge_l("a c e", "a b c d e");
    let ident = [rouge_n("x y z", "x y z", 1), rouge_n("x y z", "x y z", 2), rouge_l("x y z", "x y z")];
    let fixtures_ok = close(uni.f1, 0.8) && close(lcs.f1, 0.75) && ident.iter().all(|s| s.f1 == 1.0);
    let mut rng = rng_from_seed(11);
    let mut matches = 0;
    for _ in 0..100 {
        let a: Vec<u8> = (0..rng.gen_range(0..=10)).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = (0..rng.gen_range(0..=10)).map(|_| rng.gen_range(0..4)).collect();
        matches += usize::from(lcs_len(&a, &b) == lcs_brute_force(&a, &b));
    }
    outcome(
        fixtures_ok && matches == 100,
        format!(
            "unigram F {:.3}, LCS F {:.3}, identity 1.0: {}, LCS brute force {matches}/100",
            uni.f1,
            lcs.f1,
            ident.iter().all(|s| s.f1 == 1.0)
        ),
    )
}

fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["qt".to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    qt_core::cli::main_with_args(full)
}

/// train -> summarize -> eval in `dir`; returns (summaries, metrics) bytes.
fn pipeline_once(dir: &Path, references: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let out = dir.join("run");
    let reviews = toy_corpus_path().to_str().unwrap();
    let sets = [
        "--set",
        "model.dim=32",
        "--set",
        "model.ff_dim=64",
        "--set",
        "model.layers=1",
        "--set",
        "model.sentence_heads=4",
        "--set",
        "model.codebook_size=32",
        "--set",
        "model.soft_samples=10",
        "--set",
        "model.batch_tokens=64",
        "--set",
        "model.vocab_size=128",
        "--set",
        "model.epochs=8",
        "--set",
        "model.warmup_epochs=2",
        "--seed",
        "5",
    ];
    let mut train_args = vec!["train", "--reviews", reviews, "--output-dir", out.to_str().unwrap()];
    train_args.extend(sets);
    if run_cli(&train_args) != 0 {
        return Err("train failed".into());
    }
    let ckpt = out.join("model.qtckpt");
    let summaries = dir.join("summaries.jsonl");
    let mut sum_args = vec![
        "summarize",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--reviews",
        reviews,
        "--output",
        summaries.to_str().unwrap(),
    ];
    sum_args.extend(sets);
    if run_cli(&sum_args) != 0 {
        return Err("summarize failed".into());
    }
    let metrics = dir.join("metrics.json");
    let eval_args = [
        "eval",
        "--summaries",
        summaries.to_str().unwrap(),
        "--references",
        references.to_str().unwrap(),
        "--output",
        metrics.to_str().unwrap(),
    ];
    if run_cli(&eval_args) != 0 {
        return Err("eval failed".into());
    }
    let read = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
    Ok((read(&summaries)?, read(&metrics)?))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = load_reviews(toy_corpus_path()).unwrap();
    let mut refs = String::new();
    for e in &corpus.entities {
        let text = e.reviews[0].sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        refs.push_str(&serde_json::json!({"entity_id": e.entity_id, "references": [text]}).to_string());
        refs.push('\n');
    }
    let ref_path = tmp.path().join("references.jsonl");
    std::fs::write(&ref_path, refs).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    match (pipeline_once(&a, &ref_path), pipeline_once(&b, &ref_path)) {
        (Ok(x), Ok(y)) => {
            let lines = x.0.iter().filter(|&&c| c == b'\n').count();
            outcome(
                x == y && lines == corpus.entities.len(),
                format!(
                    "summaries identical: {}, metrics identical: {}, {lines} summaries",
                    x.0 == y.0,
                    x.1 == y.1
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn config_fidelity() -> Outcome {
    let c = RunConfig::load(None, &[]).unwrap();
    let m = &c.model;
    let e = &c.extraction;
    let got = (
        (m.dim, m.ff_dim, m.layers, m.attn_heads, m.sentence_heads, m.codebook_size, m.soft_samples),
        (e.cluster_samples, e.sentences_per_cluster),
        (m.lr, m.lr_decay, m.warmup_epochs, m.epochs),
    );
    let want = ((320, 512, 3, 4, 8, 1024, 30), (300, 30), (1e-3, 0.9, 4, 20));
    outcome(got == want, format!("{got:?}"))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut notes: BTreeMap<usize, String> = BTreeMap::new();
    let mut timed = |id: usize, name: &'static str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((id, name, o, t.elapsed(), limit));
    };
    let secs = Duration::from_secs;

    timed(1, "quantizer exactness", secs(1), &mut quantizer_exactness);
    timed(2, "soft-EM distribution", secs(5), &mut soft_em_distribution);
    timed(3, "EMA convergence", secs(10), &mut ema_convergence);
    timed(4, "gradient fidelity", secs(30), &mut gradient_fidelity);
    let mut toy_log = None;
    timed(5, "training progress", secs(600), &mut || {
        let (o, log) = training_progress();
        toy_log = log;
        o
    });
    timed(6, "two-step sampling", secs(60), &mut two_step_sampling);
    timed(7, "popularity pipeline", secs(900), &mut || {
        let (o, note) = popularity_pipeline();
        notes.insert(7, note);
        o
    });
    timed(8, "aspect machinery", secs(900), &mut || {
        let (o, note) = aspect_machinery(toy_log.as_ref());
        notes.insert(8, note);
        o
    });
    timed(9, "ROUGE oracles", secs(5), &mut rouge_oracles);
    timed(10, "determinism", secs(900), &mut determinism);
    timed(11, "config fidelity", secs(1), &mut config_fidelity);

    let mut failed = 0;
    for (id, name, o, took, limit) in &results {
        let pass = o.pass && took <= limit;
        failed += usize::from(!pass);
        println!(
            "[{}] criterion {id:2} {name}: {} ({:.2}s, limit {}s)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
        if let Some(n) = notes.get(id) {
            println!("       info: {n}");
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
