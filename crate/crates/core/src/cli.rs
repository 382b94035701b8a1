//! Command-line surface: argument definitions and the command implementations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (bad config, missing or
//! malformed files, a diverged run), 3 a check ran and failed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::adapt::make_pseudo_real;
use crate::checks::{gradient_suite, GRADCHECK_TOLERANCE};
use crate::config::RunConfig;
use crate::corpus::{compute_stats, read_corpus, write_corpus, CorpusRecord, RecordBuilder, Split, CORPUS_HEADER};
use crate::error::{Error, Result};
use crate::model::Vocab;
use crate::train::{
    build_grounding_samples, evaluate_grounding, finetune, pretrain, read_metrics, FinetuneData, MetricsLog,
    TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "scenevl", version, about = "Synthetic 3D scene-text corpora and vision-language pre-training")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus and its manifest.
    Generate(GenerateArgs),
    /// Summarize a corpus or a metrics log.
    Stats(StatsArgs),
    /// Pre-train on a corpus.
    Pretrain(PretrainArgs),
    /// Fine-tune a pre-trained checkpoint against a pseudo-real corpus.
    Finetune(FinetuneArgs),
    /// Finite-difference check of every loss on the micro model.
    Gradcheck(GradcheckArgs),
    /// Top-1 grounding accuracy on the pseudo-real held-out split.
    EvalGrounding(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus path; the manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; all available cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus or metrics log; the configured corpus when omitted.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Output directory for checkpoints, vocabulary and metrics.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pre-trained checkpoint; `<out>/pretrain.ckpt` when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus to shift into the pseudo-real domain.
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub pooled_vision: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate; `<out>/finetune.ckpt` when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a successful command reports on standard output.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done(Value),
    /// The command ran but its check failed.
    CheckFailed(Value),
}

impl Outcome {
    pub fn value(&self) -> &Value {
        match self {
            Outcome::Done(v) | Outcome::CheckFailed(v) => v,
        }
    }
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Done(_)) => 0,
        Ok(Outcome::CheckFailed(_)) => 3,
        Err(_) => 2,
    }
}

/// Parses arguments, runs the command, prints its report and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = run(&cli);
    match &result {
        Ok(o) => {
            // A closed pipe on stdout is not worth a panic.
            let text = serde_json::to_string_pretty(o.value()).expect("report serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => generate(&mut cfg, a),
        Command::Stats(a) => stats(&cfg, a),
        Command::Pretrain(a) => run_pretrain(&mut cfg, a),
        Command::Finetune(a) => run_finetune(&mut cfg, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::EvalGrounding(a) => eval_grounding(&mut cfg, a),
    }
}

fn generate(cfg: &mut RunConfig, a: &GenerateArgs) -> Result<Outcome> {
    if let Some(n) = a.scenes {
        cfg.scenes = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = &a.out {
        cfg.paths.corpus = p.clone();
    }
    let catalog = cfg.catalog()?;
    let builder = RecordBuilder {
        generation: &cfg.generation,
        catalog: &catalog,
        relations: &cfg.relations,
        max_relations: cfg.text.max_relations,
    };
    let started = Instant::now();
    let records = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| builder.build_many(cfg.seed, cfg.scenes))?,
        None => builder.build_many(cfg.seed, cfg.scenes)?,
    };
    let manifest = write_corpus(records, &cfg.paths.corpus, catalog.len())?;
    Ok(Outcome::Done(json!({
        "corpus": cfg.paths.corpus,
        "manifest": manifest,
        "seconds": started.elapsed().as_secs_f64(),
    })))
}

fn first_line(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    Ok(line.trim_end().to_owned())
}

fn stats(cfg: &RunConfig, a: &StatsArgs) -> Result<Outcome> {
    let path = a.path.clone().unwrap_or_else(|| cfg.paths.corpus.clone());
    if first_line(&path)? == CORPUS_HEADER {
        let s = compute_stats(&path)?;
        return Ok(Outcome::Done(serde_json::to_value(s).expect("stats serialize")));
    }
    let records = read_metrics(&path)?;
    let mut kinds: BTreeMap<String, Value> = BTreeMap::new();
    for kind in ["train", "eval"] {
        let of_kind: Vec<_> = records.iter().filter(|r| r.kind == kind).collect();
        if let (Some(first), Some(last)) = (of_kind.first(), of_kind.last()) {
            kinds.insert(
                kind.into(),
                json!({
                    "records": of_kind.len(),
                    "first": first,
                    "last": last,
                }),
            );
        }
    }
    Ok(Outcome::Done(json!({ "metrics": path, "records": records.len(), "kinds": kinds })))
}

fn fresh_log(path: &Path) -> Result<MetricsLog> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    MetricsLog::open(Some(path))
}

fn run_pretrain(cfg: &mut RunConfig, a: &PretrainArgs) -> Result<Outcome> {
    if let Some(p) = &a.corpus {
        cfg.paths.corpus = p.clone();
    }
    if let Some(n) = a.steps {
        cfg.pretrain.steps = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.pretrain.learning_rate = lr;
    }
    if let Some(o) = &a.out {
        cfg.paths.output_dir = o.clone();
    }
    cfg.validate()?;
    let records = read_corpus(&cfg.paths.corpus)?;
    let mut state = TrainState::new(&records, cfg.model.clone(), cfg.seed)?;
    let out = &cfg.paths.output_dir;
    let metrics = out.join("pretrain-metrics.jsonl");
    let mut log = fresh_log(&metrics)?;
    let report = pretrain(&mut state, &records, &cfg.pretrain, cfg.seed, Some(out), &mut log)?;
    Ok(Outcome::Done(json!({
        "steps": report.steps,
        "initial": report.initial,
        "last": report.last,
        "ratio": report.last.total / report.initial.total,
        "checkpoint": report.checkpoint,
        "metrics": metrics,
    })))
}

fn vocab_next_to(checkpoint: &Path) -> Result<Vocab> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    Vocab::load(&dir.join("vocab.txt"))
}

fn real_records(cfg: &RunConfig, flag: Option<&PathBuf>, synthetic: Option<&[CorpusRecord]>) -> Result<Vec<CorpusRecord>> {
    match flag.or(cfg.paths.real_corpus.as_ref()) {
        Some(p) => read_corpus(p),
        None => match synthetic {
            Some(s) => Ok(s.to_vec()),
            None => read_corpus(&cfg.paths.corpus),
        },
    }
}

fn run_finetune(cfg: &mut RunConfig, a: &FinetuneArgs) -> Result<Outcome> {
    if let Some(p) = &a.corpus {
        cfg.paths.corpus = p.clone();
    }
    if let Some(n) = a.steps {
        cfg.finetune.steps = n;
    }
    if let Some(b) = a.beta {
        cfg.finetune.beta = b;
    }
    if let Some(l) = a.lambda {
        cfg.finetune.lambda = l;
    }
    if a.pooled_vision {
        cfg.finetune.pooled_vision = true;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.finetune.learning_rate = lr;
    }
    if let Some(o) = &a.out {
        cfg.paths.output_dir = o.clone();
    }
    cfg.validate()?;
    let checkpoint = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.output_dir.join("pretrain.ckpt"));
    let vocab = vocab_next_to(&checkpoint)?;
    let mut state = TrainState::from_checkpoint(&checkpoint, vocab, cfg.seed)?;
    let synthetic = read_corpus(&cfg.paths.corpus)?;
    let real = real_records(cfg, a.real.as_ref(), Some(&synthetic))?;
    let data = FinetuneData::build(&synthetic, &real, &cfg.shift, &state.vocab, &state.model)?;
    let out = &cfg.paths.output_dir;
    let metrics = out.join("finetune-metrics.jsonl");
    let mut log = fresh_log(&metrics)?;
    let report = finetune(&mut state, &data, &cfg.finetune, cfg.seed, Some(out), &mut log)?;
    Ok(Outcome::Done(json!({
        "steps": report.steps,
        "beta": cfg.finetune.beta,
        "initial": report.initial,
        "last": report.last,
        "skipped_records": data.skipped,
        "checkpoint": report.checkpoint,
        "metrics": metrics,
    })))
}

fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let checks = gradient_suite(a.seed)?;
    let all = checks.iter().all(|c| c.passed());
    let rows: Vec<Value> = checks
        .iter()
        .map(|c| {
            json!({
                "loss": c.name,
                "max_rel_error": c.report.max_rel_error,
                "worst": c.report.worst,
                "pass": c.passed(),
            })
        })
        .collect();
    let report = json!({
        "tolerance": GRADCHECK_TOLERANCE,
        "pass": all,
        "max_rel_error": checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max),
        "checks": rows,
    });
    Ok(if all {
        Outcome::Done(report)
    } else {
        Outcome::CheckFailed(report)
    })
}

fn eval_grounding(cfg: &mut RunConfig, a: &EvalArgs) -> Result<Outcome> {
    if let Some(o) = &a.out {
        cfg.paths.output_dir = o.clone();
    }
    let checkpoint = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.output_dir.join("finetune.ckpt"));
    let vocab = vocab_next_to(&checkpoint)?;
    let state = TrainState::from_checkpoint(&checkpoint, vocab, cfg.seed)?;
    let real = real_records(cfg, a.real.as_ref(), None)?;
    let shifted = make_pseudo_real(&real, &cfg.shift)?;
    let held: Vec<CorpusRecord> = shifted.records.into_iter().filter(|r| r.split == Split::Val).collect();
    let c = &state.model.config;
    let samples = build_grounding_samples(&held, &state.vocab, c.max_text_len, c.max_objects, c.categories)?;
    if samples.is_empty() {
        return Err(Error::Invalid("the held-out split has no grounding samples".into()));
    }
    let eval = evaluate_grounding(&state.model, &state.store, &samples)?;
    Ok(Outcome::Done(json!({
        "checkpoint": checkpoint,
        "accuracy": eval.accuracy,
        "chance": eval.chance,
        "samples": eval.samples,
    })))
}
