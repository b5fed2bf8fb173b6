use std::path::Path;
use std::process::{Command, Output};

use qt_core::synthetic::{planted_aspect_config, planted_aspect_corpus};

fn qt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("qt runs")
}

const SMALL: &[&str] = &[
    "--set", "model.dim=32",
    "--set", "model.ff_dim=64",
    "--set", "model.layers=1",
    "--set", "model.sentence_heads=2",
    "--set", "model.codebook_size=32",
    "--set", "model.soft_samples=10",
    "--set", "model.batch_tokens=64",
    "--set", "model.vocab_size=128",
    "--set", "model.epochs=6",
    "--set", "model.warmup_epochs=2",
    "--set", "data.dev_fraction=0.25",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn joined(summary: &serde_json::Value) -> String {
    let parts: Vec<&str> = summary["sentences"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    parts.join(" ")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_summarize_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let reviews = dir.path().join("reviews.jsonl");
    let lc = planted_aspect_corpus(3, 8, 30);
    let mut bytes = Vec::new();
    lc.corpus.write_jsonl(&mut bytes).unwrap();
    std::fs::write(&reviews, bytes).unwrap();
    let aspects = dir.path().join("aspects.json");
    std::fs::write(&aspects, serde_json::to_string(&planted_aspect_config()).unwrap()).unwrap();
    let run = dir.path().join("run");

    let out = qt(&with_small(&["train", "--reviews", s(&reviews), "--output-dir", s(&run)]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["effective_config.json", "dev.jsonl", "tokenizer.json", "train_log.jsonl", "train_summary.json", "model.qtckpt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);

    let ckpt = run.join("model.qtckpt");
    let general = dir.path().join("general.jsonl");
    let out = qt(&["summarize", "--checkpoint", s(&ckpt), "--reviews", s(&reviews), "--output", s(&general)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&general).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 8);
    for l in &lines {
        assert_eq!(l["scope"], "general");
        assert!(l["word_count"].as_u64().unwrap() <= 100);
    }

    let out = qt(&[
        "summarize", "--checkpoint", s(&ckpt), "--reviews", s(&reviews), "--aspect", "rooms",
        "--aspect-config", s(&aspects), "--method", "nearest",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() > 0);
    for l in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["scope"], "aspect(rooms)");
        assert!(v["word_count"].as_u64().unwrap() <= 75);
    }

    let out = qt(&[
        "summarize", "--checkpoint", s(&ckpt), "--reviews", s(&reviews), "--aspect", "parking",
        "--aspect-config", s(&aspects),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rooms"));

    let refs = dir.path().join("refs.jsonl");
    let first = &lines[0];
    std::fs::write(
        &refs,
        format!("{}\n", serde_json::json!({"entity_id": first["entity_id"], "references": [joined(first)]})),
    )
    .unwrap();
    let metrics = dir.path().join("metrics.json");
    let out = qt(&["eval", "--summaries", s(&general), "--references", s(&refs), "--output", s(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["corpus"]["rouge1"].as_f64(), Some(1.0));
    assert_eq!(m["corpus"]["rouge_l"].as_f64(), Some(1.0));
    assert_eq!(m["skipped"].as_array().unwrap().len(), 7);

    let disjoint = dir.path().join("disjoint.jsonl");
    std::fs::write(&disjoint, "{\"entity_id\": \"nowhere\", \"references\": [\"x\"]}\n").unwrap();
    assert_eq!(qt(&["eval", "--summaries", s(&general), "--references", s(&disjoint)]).status.code(), Some(7));

    let csv = dir.path().join("codes.csv");
    let out = qt(&["export-embeddings", "--checkpoint", s(&ckpt), "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("code_id,head,count,e0,"));
    assert_eq!(table.lines().count(), 33);

    let other = dir.path().join("other_tokenizer.json");
    let tok = qt_core::corpus::Tokenizer::train(["completely different words here"], 64, 64).unwrap();
    tok.save(&other).unwrap();
    let out = qt(&["summarize", "--checkpoint", s(&ckpt), "--reviews", s(&reviews), "--tokenizer", s(&other)]);
    assert_eq!(out.status.code(), Some(6));
}

#[test]
fn config_echo_and_errors() {
    let out = qt(&["config", "--set", "model.dim=64", "--seed", "3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["model"]["dim"], 64);
    assert_eq!(v["seed"], 3);
    assert_eq!(v["extraction"]["seed"], 3);
    assert_eq!(v["model"]["codebook_size"], 1024);

    assert_eq!(qt(&["config", "--set", "model.dimension=3"]).status.code(), Some(2));
    assert_eq!(qt(&["config", "--set", "data.dev_fraction=1.5"]).status.code(), Some(2));
    let missing = qt(&["train", "--reviews", "/nonexistent/reviews.jsonl"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/reviews.jsonl"));
    assert_eq!(qt(&["summarize", "--reviews", "/nonexistent/reviews.jsonl", "--checkpoint", "/nonexistent/m.qtckpt"]).status.code(), Some(6));
}
