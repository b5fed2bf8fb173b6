//! `qt` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O failure writing outputs, 2 configuration
//! error, 3 data error, 4 numeric abort during training, 5 unknown aspect,
//! 6 checkpoint or tokenizer mismatch, 7 nothing to evaluate.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::aspect::{aspect_summarize, AspectCodeMap, AspectConfig, AspectError};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{build_tokenizer, load_reviews, split_corpus, CorpusError, ReviewCorpus, TextEncoder, Tokenizer};
use crate::eval::{evaluate_corpus, read_references, SystemText};
use crate::extraction::{EncodedEntity, ExtractionError, Method, Scope, Summary};
use crate::model::{load_checkpoint, save_checkpoint, train, CheckpointError, ModelError, TrainedModel};
use crate::quantizer::{code_owners, hard_assign};

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_UNKNOWN_ASPECT: i32 = 5;
pub const EXIT_CHECKPOINT: i32 = 6;
pub const EXIT_NOTHING_ALIGNED: i32 = 7;

/// Default aspect inventory for hotel reviews. The query terms are
/// placeholders to be confirmed by the user.
pub const DEFAULT_HOTEL_ASPECTS: &str = include_str!("../assets/hotel_aspects.json");

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let code = match e {
            CorpusError::Config(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::new(EXIT_CHECKPOINT, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Config(_) => EXIT_CONFIG,
            ModelError::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ExtractionError> for CliError {
    fn from(e: ExtractionError) -> Self {
        let code = match e {
            ExtractionError::Config(_) => EXIT_CONFIG,
            ExtractionError::NoAspectSignal(_) => EXIT_UNKNOWN_ASPECT,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<AspectError> for CliError {
    fn from(e: AspectError) -> Self {
        match e {
            AspectError::Extraction(x) => x.into(),
            AspectError::UnknownAspect { .. } => Self::new(EXIT_UNKNOWN_ASPECT, e.to_string()),
            AspectError::Config(_) => Self::new(EXIT_CONFIG, e.to_string()),
            _ => Self::new(EXIT_DATA, e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "qt", version, about = "Quantized transformer opinion summarizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.dim=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        overrides.extend(extra);
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
            overrides.push(format!("extraction.seed={s}"));
        }
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint plus training log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        reviews: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Extract general or aspect summaries as JSONL.
    Summarize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        reviews: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        /// Word budget (general or aspect, whichever is produced).
        #[arg(long)]
        budget: Option<usize>,
        /// Aspect to summarize; repeatable.
        #[arg(long)]
        aspect: Vec<String>,
        /// Summarize every aspect in the aspect config.
        #[arg(long)]
        all_aspects: bool,
        #[arg(long)]
        aspect_config: Option<PathBuf>,
        /// Held-out sentences for estimating code aspects.
        #[arg(long)]
        dev_reviews: Option<PathBuf>,
        /// Tokenizer file that must match the checkpoint.
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        /// Write the aspect code map as JSON.
        #[arg(long)]
        export_aspect_map: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score summaries against references with ROUGE-1/2/L.
    Eval {
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Metrics JSON output; the table always goes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write code embeddings as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Count code popularity and head ownership on this corpus.
        #[arg(long)]
        reviews: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { cfg, reviews, output_dir } => {
            let mut extra = Vec::new();
            if let Some(r) = reviews {
                extra.push(format!("data.reviews={}", json_str(&r)));
            }
            if let Some(o) = output_dir {
                extra.push(format!("data.output_dir={}", json_str(&o)));
            }
            let cfg = cfg.load(extra)?;
            with_pool(cfg.deterministic_mode, || cmd_train(&cfg))
        }
        Command::Summarize {
            cfg,
            checkpoint,
            reviews,
            method,
            budget,
            aspect,
            all_aspects,
            aspect_config,
            dev_reviews,
            tokenizer,
            export_aspect_map,
            output,
        } => {
            let mut run = cfg.load(Vec::new())?;
            if let Some(m) = method {
                run.extraction.method = m;
            }
            if let Some(b) = budget {
                run.extraction.word_budget = b;
                run.extraction.aspect_word_budget = b;
            }
            run.extraction.validate()?;
            let opts = SummarizeOptions {
                checkpoint: checkpoint.unwrap_or_else(|| run.data.checkpoint_path()),
                reviews,
                aspects: aspect,
                all_aspects,
                aspect_config: aspect_config.or_else(|| run.data.aspect_config.clone()),
                dev_reviews,
                tokenizer,
                export_aspect_map,
            };
            let lines = with_pool(run.deterministic_mode, || cmd_summarize(&run, &opts))?;
            write_output(output.as_deref(), &lines)
        }
        Command::Eval {
            summaries,
            references,
            output,
        } => cmd_eval(&summaries, &references, output.as_deref()),
        Command::ExportEmbeddings { checkpoint, out, reviews } => {
            cmd_export_embeddings(&checkpoint, &out, reviews.as_deref())
        }
        Command::Config { cfg } => {
            let cfg = cfg.load(Vec::new())?;
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn json_str(p: &Path) -> String {
    serde_json::to_string(&p.to_string_lossy()).expect("string serializes")
}

fn with_pool<T: Send>(single: bool, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if !single {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    pool.install(f)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_IO, format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())
                .map_err(|e| CliError::new(EXIT_IO, e.to_string()))
        }
    }
}

fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
        .collect()
}

/// Trains from `cfg.data.reviews` and writes the checkpoint, `train_log.jsonl`,
/// `effective_config.json`, `train_summary.json` and the dev split into the
/// output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let reviews = cfg
        .data
        .reviews
        .as_ref()
        .ok_or_else(|| CliError::new(EXIT_CONFIG, "no review file given (data.reviews or --reviews)"))?;
    let corpus = load_reviews(reviews)?;
    if corpus.is_empty() {
        return Err(CliError::new(EXIT_DATA, format!("{} contains no sentences", reviews.display())));
    }
    let out = &cfg.data.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_file(&out.join("effective_config.json"), cfg.to_json().as_bytes())?;

    let (train_set, dev_set) = if corpus.entities.len() >= 2 {
        split_corpus(&corpus, cfg.data.dev_fraction, cfg.seed)?
    } else {
        warn!("single entity; training on all data without a dev split");
        (corpus.clone(), ReviewCorpus::default())
    };
    let mut dev_bytes = Vec::new();
    dev_set
        .write_jsonl(&mut dev_bytes)
        .map_err(|e| io_err(&out.join("dev.jsonl"), e))?;
    write_file(&out.join("dev.jsonl"), &dev_bytes)?;

    let tokenizer = build_tokenizer(&train_set, cfg.model.vocab_size)?;
    write_file(&out.join("tokenizer.json"), tokenizer.to_json().as_bytes())?;
    let mut model = TrainedModel::new(cfg.model.clone(), tokenizer, cfg.seed)?;
    let log = train(&mut model, &train_set, cfg.seed)?;
    write_file(&out.join("train_log.jsonl"), to_jsonl(&log.epochs).as_bytes())?;
    let summary = serde_json::json!({
        "sentences": train_set.num_sentences(),
        "dev_sentences": dev_set.num_sentences(),
        "parameters": model.num_parameters(),
        "steps": model.step,
        "head_purity": log.head_purity,
    });
    write_file(
        &out.join("train_summary.json"),
        serde_json::to_string_pretty(&summary).expect("json").as_bytes(),
    )?;
    let ckpt = cfg.data.checkpoint_path();
    save_checkpoint(&model, &ckpt)?;
    info!("wrote {}", ckpt.display());
    info!("head purity {:.4}", log.head_purity);
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct SummarizeOptions {
    pub checkpoint: PathBuf,
    pub reviews: PathBuf,
    pub aspects: Vec<String>,
    pub all_aspects: bool,
    pub aspect_config: Option<PathBuf>,
    pub dev_reviews: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub export_aspect_map: Option<PathBuf>,
}

/// Returns the summaries as JSONL, sorted by entity id and scope.
pub fn cmd_summarize(cfg: &RunConfig, opts: &SummarizeOptions) -> Result<String> {
    let model = load_checkpoint(&opts.checkpoint)?;
    if let Some(t) = &opts.tokenizer {
        let tok = Tokenizer::load(t)?;
        if tok.fingerprint() != model.tokenizer.fingerprint() {
            return Err(CheckpointError::TokenizerMismatch {
                expected: model.tokenizer.fingerprint(),
                found: tok.fingerprint(),
            }
            .into());
        }
    }
    if !model.codebook_ready {
        return Err(CliError::new(
            EXIT_CHECKPOINT,
            "checkpoint has no trained codebook (training ended inside warm-up)",
        ));
    }
    let corpus = load_reviews(&opts.reviews)?;
    let ext = &cfg.extraction;

    let want_aspects = opts.all_aspects || !opts.aspects.is_empty();
    let aspect_setup = if want_aspects {
        let aspects = match &opts.aspect_config {
            Some(p) => AspectConfig::load(p)?,
            None => AspectConfig::from_json(DEFAULT_HOTEL_ASPECTS)?,
        };
        let names = if opts.all_aspects {
            aspects.names()
        } else {
            opts.aspects.clone()
        };
        for n in &names {
            aspects.index_of(n)?;
        }
        let dev_path = opts.dev_reviews.clone().unwrap_or_else(|| {
            let sibling = opts.checkpoint.with_file_name("dev.jsonl");
            if sibling.exists() && fs::metadata(&sibling).map(|m| m.len() > 0).unwrap_or(false) {
                sibling
            } else {
                opts.reviews.clone()
            }
        });
        info!("estimating code aspects from {}", dev_path.display());
        let dev = load_reviews(&dev_path)?;
        let map = build_aspect_map(&model, &dev, &aspects, cfg)?;
        if let Some(p) = &opts.export_aspect_map {
            write_file(p, serde_json::to_string_pretty(&map).expect("json").as_bytes())?;
        }
        Some((map, names))
    } else {
        None
    };

    let mut entities: Vec<_> = corpus.entities.iter().collect();
    entities.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    let per_entity: Vec<Result<Vec<Summary>>> = entities
        .par_iter()
        .map(|e| {
            let enc = EncodedEntity::new(&model, e)?;
            match &aspect_setup {
                None => Ok(vec![enc.summarize(&model.codebook, ext, Scope::General, None)?]),
                Some((map, names)) => names
                    .iter()
                    .map(|a| Ok(aspect_summarize(&enc, &model.codebook, map, a, ext)?))
                    .collect(),
            }
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_entity {
        rows.extend(r?);
    }
    Ok(to_jsonl(&rows))
}

/// Encodes and assigns the dev sentences, then estimates the code aspect map.
pub fn build_aspect_map(
    model: &TrainedModel,
    dev: &ReviewCorpus,
    aspects: &AspectConfig,
    cfg: &RunConfig,
) -> Result<AspectCodeMap> {
    let mut texts = Vec::new();
    let mut ids = Vec::new();
    for t in dev.texts() {
        let enc = model.tokenizer.encode(t);
        if !enc.ids.is_empty() {
            texts.push(t);
            ids.push(enc.ids);
        }
    }
    if ids.is_empty() {
        return Err(CliError::new(EXIT_DATA, "held-out set has no sentences"));
    }
    let batch: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
    let encodings = model.encode_batch(&batch)?;
    let table = hard_assign(&model.codebook, &encodings).map_err(|e| CliError::new(EXIT_DATA, e.to_string()))?;
    Ok(AspectCodeMap::build(&table, &texts, aspects, cfg.data.term_count)?)
}

fn read_system_summaries(path: &Path) -> Result<Vec<SystemText>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::new(EXIT_DATA, format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Summary = serde_json::from_str(line)
            .map_err(|e| CliError::new(EXIT_DATA, format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(SystemText {
            entity_id: s.entity_id.clone(),
            scope: s.scope.to_string(),
            text: s.text(),
        });
    }
    Ok(out)
}

pub fn cmd_eval(summaries: &Path, references: &Path, output: Option<&Path>) -> Result<()> {
    let system = read_system_summaries(summaries)?;
    let file = fs::File::open(references)
        .map_err(|e| CliError::new(EXIT_DATA, format!("cannot read {}: {e}", references.display())))?;
    let refs = read_references(BufReader::new(file))
        .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", references.display())))?;
    let report = evaluate_corpus(&system, &refs)
        .ok_or_else(|| CliError::new(EXIT_NOTHING_ALIGNED, "no summary aligns with a reference entity"))?;
    if !report.skipped.is_empty() {
        warn!("skipped without references: {}", report.skipped.join(", "));
    }
    print!("{}", report.to_table());
    if let Some(p) = output {
        write_file(p, serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    }
    Ok(())
}

/// CSV with one row per code: `code_id,head,count,e_0,…,e_{D-1}`. `head` is
/// the majority head and `count` the popularity, measured on `reviews` when
/// given; without reviews `head` comes from the training usage and `count`
/// is empty.
pub fn cmd_export_embeddings(checkpoint: &Path, out: &Path, reviews: Option<&Path>) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let h = model.config.sentence_heads;
    let (usage, counts) = match reviews {
        Some(p) => {
            let corpus = load_reviews(p)?;
            let ids: Vec<Vec<u32>> = corpus
                .texts()
                .map(|t| model.tokenizer.encode(t).ids)
                .filter(|i| !i.is_empty())
                .collect();
            let batch: Vec<&[u32]> = ids.iter().map(Vec::as_slice).collect();
            let enc = model.encode_batch(&batch)?;
            let table = hard_assign(&model.codebook, &enc).map_err(|e| CliError::new(EXIT_DATA, e.to_string()))?;
            (table.code_head_usage(), Some(table.popularity))
        }
        None => (model.code_head_usage.clone(), None),
    };
    let owners = code_owners(&usage, h);
    let mut csv = String::from("code_id,head,count");
    for j in 0..model.codebook.dim() {
        csv.push_str(&format!(",e{j}"));
    }
    csv.push('\n');
    for k in 0..model.codebook.size() {
        csv.push_str(&k.to_string());
        csv.push(',');
        if let Some(o) = owners[k] {
            csv.push_str(&o.to_string());
        }
        csv.push(',');
        if let Some(c) = &counts {
            csv.push_str(&c[k].to_string());
        }
        for v in model.codebook.embedding(k) {
            csv.push(',');
            csv.push_str(&v.to_string());
        }
        csv.push('\n');
    }
    write_file(out, csv.as_bytes())
}
