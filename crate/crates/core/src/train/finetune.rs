use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{
    align_loss, finetune_loss, grounding_task_loss, make_pseudo_real, AlignLosses, Discriminators, DomainSample,
    ShiftConfig, REAL, SYNTHETIC,
};
use crate::autodiff::{AdamW, BoundParams, ParamStore, Tape, Var};
use crate::corpus::{CorpusRecord, Split};
use crate::error::{Error, Result};
use crate::model::{Model, Vocab};

use super::samples::{build_grounding_samples, GroundingSample};
use super::{save_checkpoint, CheckpointMeta, FinetuneConfig, MetricsLog, MetricsRecord, TrainState};

/// Grounding samples for the three roles of fine-tuning.
#[derive(Clone, Debug)]
pub struct FinetuneData {
    /// Synthetic samples, labelled as the synthetic domain.
    pub synthetic: Vec<GroundingSample>,
    /// Pseudo-real training split; supplies the task loss.
    pub real_train: Vec<GroundingSample>,
    /// Pseudo-real held-out split.
    pub real_eval: Vec<GroundingSample>,
    /// Records dropped while shifting.
    pub skipped: usize,
}

impl FinetuneData {
    /// Shifts `real` into the pseudo-real domain and splits it by record
    /// split; the synthetic side uses the training split of `synthetic`.
    pub fn build(
        synthetic: &[CorpusRecord],
        real: &[CorpusRecord],
        shift: &ShiftConfig,
        vocab: &Vocab,
        model: &Model,
    ) -> Result<Self> {
        let c = &model.config;
        let samples = |records: &[CorpusRecord]| {
            build_grounding_samples(records, vocab, c.max_text_len, c.max_objects, c.categories)
        };
        let shifted = make_pseudo_real(real, shift)?;
        let of_split = |records: &[CorpusRecord], split| -> Vec<CorpusRecord> {
            records.iter().filter(|r| r.split == split).cloned().collect()
        };
        let data = Self {
            synthetic: samples(&of_split(synthetic, Split::Train))?,
            real_train: samples(&of_split(&shifted.records, Split::Train))?,
            real_eval: samples(&of_split(&shifted.records, Split::Val))?,
            skipped: shifted.skipped,
        };
        if data.synthetic.is_empty() || data.real_train.is_empty() || data.real_eval.is_empty() {
            return Err(Error::Invalid(format!(
                "fine-tuning needs samples in every role (synthetic {}, real train {}, real held-out {})",
                data.synthetic.len(),
                data.real_train.len(),
                data.real_eval.len()
            )));
        }
        Ok(data)
    }
}

/// Top-1 grounding accuracy and the accuracy of guessing uniformly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingEval {
    pub accuracy: f64,
    pub chance: f64,
    pub samples: usize,
}

pub fn evaluate_grounding(model: &Model, store: &ParamStore, samples: &[GroundingSample]) -> Result<GroundingEval> {
    let mut correct = 0usize;
    let mut chance = 0.0;
    for s in samples {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = model.forward(&p, &s.tokens, &s.objects, &vec![false; s.objects.len()], None)?;
        let logits = model.grounding_logits(&p, &out.cls, &out.objects)?.value();
        let best = logits
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        correct += usize::from(best == s.target);
        chance += 1.0 / s.objects.len() as f64;
    }
    let n = samples.len().max(1) as f64;
    Ok(GroundingEval {
        accuracy: correct as f64 / n,
        chance: chance / n,
        samples: samples.len(),
    })
}

/// Task, adaptation and combined fine-tuning losses of one batch. With
/// `beta = 1` the synthetic samples are not run and the adaptation terms are `None`.
pub fn finetune_sample_losses<'t>(
    model: &Model,
    disc: &Discriminators,
    p: &BoundParams<'t>,
    real: &[&GroundingSample],
    synthetic: &[&GroundingSample],
    cfg: &FinetuneConfig,
) -> Result<(Var<'t>, Option<AlignLosses<'t>>, Var<'t>)> {
    if real.is_empty() {
        return Err(Error::Invalid("fine-tuning batch has no pseudo-real samples".into()));
    }
    let mut tasks = Vec::with_capacity(real.len());
    let mut domains = Vec::with_capacity(real.len() + synthetic.len());
    for s in real {
        let out = model.forward(p, &s.tokens, &s.objects, &vec![false; s.objects.len()], None)?;
        tasks.push(grounding_task_loss(model, p, &out.cls, &out.objects, s.target)?);
        domains.push(DomainSample {
            words: out.words,
            objects: out.objects,
            domain: REAL,
        });
    }
    let task = tasks[1..]
        .iter()
        .try_fold(tasks[0], |acc, t| acc.add(t))?
        .scale(1.0 / tasks.len() as f64);
    if cfg.beta >= 1.0 {
        return Ok((task, None, task));
    }
    for s in synthetic {
        let out = model.forward(p, &s.tokens, &s.objects, &vec![false; s.objects.len()], None)?;
        domains.push(DomainSample {
            words: out.words,
            objects: out.objects,
            domain: SYNTHETIC,
        });
    }
    let align = align_loss(disc, p, &domains, cfg.lambda, cfg.pooled_vision)?;
    let total = finetune_loss(&task, &align.total, cfg.beta)?;
    Ok((task, Some(align), total))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub steps: usize,
    pub initial: GroundingEval,
    pub last: GroundingEval,
    pub history: Vec<MetricsRecord>,
    pub checkpoint: Option<PathBuf>,
}

/// Draws indices without replacement, reshuffling when a pass is exhausted.
struct Cycler {
    n: usize,
    order: Vec<usize>,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Self { n, order: Vec::new() }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..k)
            .map(|_| {
                if self.order.is_empty() {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(rng);
                }
                self.order.pop().expect("refilled")
            })
            .collect()
    }
}

/// Optimizes `beta L_task + (1 - beta) L_align`. Adds the discriminators to
/// the store, so `state` must not already hold them.
pub fn finetune(
    state: &mut TrainState,
    data: &FinetuneData,
    cfg: &FinetuneConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
    log: &mut MetricsLog,
) -> Result<FinetuneReport> {
    cfg.validate()?;
    if state.store.id("disc.vision.w1").is_some() {
        return Err(Error::Invalid("parameter store already holds discriminators".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disc = Discriminators::new(state.model.config.d_model, &mut state.store, &mut rng);
    let mut history = Vec::new();
    let initial = evaluate_grounding(&state.model, &state.store, &data.real_eval)?;
    history.push(log.write("eval", 0, BTreeMap::new(), Some(initial.accuracy))?);

    let half = cfg.batch_size / 2;
    let mut real_order = Cycler::new(data.real_train.len());
    let mut synth_order = Cycler::new(data.synthetic.len());
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    for step in 1..=cfg.steps {
        let real: Vec<&GroundingSample> = real_order
            .take(cfg.batch_size - half, &mut rng)
            .into_iter()
            .map(|i| &data.real_train[i])
            .collect();
        // Drawn even when unused so that runs differing only in beta see the same real batches.
        let synthetic: Vec<&GroundingSample> = synth_order
            .take(half, &mut rng)
            .into_iter()
            .map(|i| &data.synthetic[i])
            .collect();
        let tape = Tape::new();
        let p = state.store.bind(&tape);
        let (task, align, total) = finetune_sample_losses(&state.model, &disc, &p, &real, &synthetic, cfg)?;
        let mut losses = BTreeMap::from([("task".to_owned(), task.item()), ("total".to_owned(), total.item())]);
        if let Some(a) = &align {
            losses.insert("align".into(), a.total.item());
            losses.insert("vision".into(), a.vision.item());
            losses.insert("language".into(), a.language.item());
            losses.insert("joint".into(), a.joint.item());
        }
        if !total.item().is_finite() {
            return Err(Error::NonFinite(format!("fine-tuning loss at step {step}")));
        }
        let grads = p.grads(&total.backward()?);
        drop(p);
        opt.step(&mut state.store, &grads)
            .map_err(|e| Error::NonFinite(format!("at step {step}: {e}")))?;
        history.push(log.write("train", step, losses, None)?);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                save_checkpoint(
                    &state.store,
                    &dir.join(format!("finetune-step{step}.ckpt")),
                    &meta(state, step),
                )?;
            }
        }
    }
    let last = evaluate_grounding(&state.model, &state.store, &data.real_eval)?;
    history.push(log.write("eval", cfg.steps.max(1), BTreeMap::new(), Some(last.accuracy))?);
    let mut checkpoint = None;
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("finetune.ckpt");
        save_checkpoint(&state.store, &path, &meta(state, cfg.steps))?;
        state.vocab.save(&dir.join("vocab.txt"))?;
        checkpoint = Some(path);
    }
    Ok(FinetuneReport {
        steps: cfg.steps,
        initial,
        last,
        history,
        checkpoint,
    })
}

fn meta(state: &TrainState, step: usize) -> CheckpointMeta {
    CheckpointMeta {
        phase: "finetune".into(),
        step,
        model: state.model.config.clone(),
        vocab_size: state.vocab.len(),
    }
}
