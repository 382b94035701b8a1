//! Training and evaluation loops, metrics logging and checkpoints.

mod finetune;
mod pretrain;
mod samples;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use finetune::{
    evaluate_grounding, finetune, finetune_sample_losses, FinetuneData, FinetuneReport, GroundingEval,
};

pub use pretrain::{pretrain, pretrain_sample_losses, PretrainLosses, PretrainReport};
pub use samples::{
    build_grounding_samples, build_pretrain_sample, truncate_description, BasicPass, GroundingSample, LevelPass,
    PretrainSample, SampleConfig,
};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::corpus::CorpusRecord;
use crate::model::{Model, ModelConfig, Vocab};

/// `[pretrain]` table of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the basic losses; the fine-grained ones get `1 - alpha`.
    pub alpha: f64,
    /// Add the `(1 - y) log(1 - p)` term to the alignment losses.
    pub negatives: bool,
    pub mlm_rate: f64,
    pub mom_rate: f64,
    /// Fraction of samples paired with another scene's description.
    pub ssm_negative_rate: f64,
    /// Save a checkpoint every this many steps (0 disables intermediate saves).
    pub checkpoint_every: usize,
    /// Fixed samples on which the loss is measured before and after training.
    pub eval_samples: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            alpha: 0.5,
            negatives: true,
            mlm_rate: 0.15,
            mom_rate: 0.15,
            ssm_negative_rate: 0.5,
            checkpoint_every: 100,
            eval_samples: 32,
        }
    }
}

/// `[finetune]` table of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    /// Samples per step; half pseudo-real, half synthetic when adapting.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight of the task loss; the adaptation loss gets `1 - beta`.
    pub beta: f64,
    /// Gradient reversal strength.
    pub lambda: f64,
    /// Vision discriminator on mean-pooled object features instead of per-object tokens.
    pub pooled_vision: bool,
    pub checkpoint_every: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta: 0.8,
            lambda: 1.0,
            pooled_vision: false,
            checkpoint_every: 0,
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")))
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("pretrain: batch_size and learning_rate must be positive".into()));
        }
        check_rate("pretrain.alpha", self.alpha)?;
        check_rate("pretrain.mlm_rate", self.mlm_rate)?;
        check_rate("pretrain.mom_rate", self.mom_rate)?;
        check_rate("pretrain.ssm_negative_rate", self.ssm_negative_rate)
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "finetune: batch_size must be at least 2 and learning_rate positive".into(),
            ));
        }
        check_rate("finetune.beta", self.beta)?;
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("finetune.lambda must be >= 0".into()));
        }
        Ok(())
    }
}

/// One line of a metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `train` records carry minibatch losses; `eval` records held-out values.
    pub kind: String,
    pub step: usize,
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_accuracy: Option<f64>,
    /// Seconds since the run started.
    pub wall_clock: f64,
}

/// Append-only line-delimited metrics file.
pub struct MetricsLog {
    file: Option<File>,
    path: Option<PathBuf>,
    started: Instant,
    last_step: BTreeMap<String, usize>,
}

impl MetricsLog {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            ),
            None => None,
        };
        Ok(Self {
            file,
            path: path.map(Path::to_owned),
            started: Instant::now(),
            last_step: BTreeMap::new(),
        })
    }

    pub fn write(
        &mut self,
        kind: &str,
        step: usize,
        losses: BTreeMap<String, f64>,
        grounding_accuracy: Option<f64>,
    ) -> Result<MetricsRecord> {
        if let Some((name, v)) = losses.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} = {v} at step {step}")));
        }
        if let Some(&prev) = self.last_step.get(kind) {
            if step <= prev {
                return Err(Error::Invalid(format!("{kind} step {step} does not follow {prev}")));
            }
        }
        self.last_step.insert(kind.to_owned(), step);
        let record = MetricsRecord {
            kind: kind.to_owned(),
            step,
            losses,
            grounding_accuracy,
            wall_clock: self.started.elapsed().as_secs_f64(),
        };
        if let (Some(f), Some(p)) = (self.file.as_mut(), self.path.as_ref()) {
            let line = serde_json::to_string(&record).expect("metrics serialize");
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        Ok(record)
    }
}

/// Reads a metrics log, checking finiteness and per-kind step order.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<MetricsRecord> = Vec::new();
    let mut last: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message,
        };
        let r: MetricsRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if r.losses.values().any(|v| !v.is_finite()) {
            return Err(bad("non-finite loss".into()));
        }
        if let Some(&prev) = last.get(&r.kind) {
            if r.step <= prev {
                return Err(bad(format!("step {} does not follow {prev}", r.step)));
            }
        }
        last.insert(r.kind.clone(), r.step);
        out.push(r);
    }
    Ok(out)
}

/// Metadata stored in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: String,
    pub step: usize,
    pub model: ModelConfig,
    pub vocab_size: usize,
}

pub fn save_checkpoint(store: &ParamStore, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    store.save(path, &serde_json::to_string(meta).expect("metadata serializes"))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let (store, meta) = ParamStore::load(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&meta)
        .map_err(|e| Error::Invalid(format!("{}: bad checkpoint metadata: {e}", path.display())))?;
    Ok((store, meta))
}

/// Model and vocabulary ready for training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub vocab: Vocab,
    pub store: ParamStore,
}

impl TrainState {
    /// Fresh model whose vocabulary covers every description in `records`.
    pub fn new(records: &[CorpusRecord], config: ModelConfig, seed: u64) -> Result<Self> {
        let vocab = Vocab::build(
            records
                .iter()
                .flat_map(|r| &r.descriptions)
                .flat_map(|d| d.text.iter().map(String::as_str)),
        );
        Self::with_vocab(vocab, config, seed)
    }

    pub fn with_vocab(vocab: Vocab, config: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(config, vocab.len(), &mut store, &mut rng)?;
        Ok(Self { model, vocab, store })
    }

    /// Rebuilds the model described by a checkpoint and copies its weights.
    /// Parameters the checkpoint lacks keep their seeded initial values.
    pub fn from_checkpoint(path: &Path, vocab: Vocab, seed: u64) -> Result<Self> {
        let (saved, meta) = load_checkpoint(path)?;
        if meta.vocab_size != vocab.len() {
            return Err(Error::Invalid(format!(
                "checkpoint expects a vocabulary of {} tokens, got {}",
                meta.vocab_size,
                vocab.len()
            )));
        }
        let mut state = Self::with_vocab(vocab, meta.model, seed)?;
        state.store.load_matching(&saved);
        Ok(state)
    }
}
