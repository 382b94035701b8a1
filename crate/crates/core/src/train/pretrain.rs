use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamW, BoundParams, ParamStore, Tape, Var};
use crate::corpus::{CorpusRecord, Split};
use crate::error::{Error, Result};
use crate::model::{MatchHead, Model};
use crate::objectives::{
    aggregate_views, match_loss, mlm_loss, mom_loss, mrwa_loss, orp_loss, pretrain_loss, ssm_loss,
};

use super::samples::{build_pretrain_sample, PretrainSample, SampleConfig};
use super::{save_checkpoint, CheckpointMeta, MetricsLog, MetricsRecord, PretrainConfig, TrainState};

/// Per-objective values of one sample or the mean over several.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLosses {
    pub mlm: f64,
    pub mom: f64,
    pub ssm: f64,
    pub orp: f64,
    pub mrwa: f64,
    pub vrwa: f64,
    pub total: f64,
}

impl PretrainLosses {
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        [
            ("mlm", self.mlm),
            ("mom", self.mom),
            ("ssm", self.ssm),
            ("orp", self.orp),
            ("mrwa", self.mrwa),
            ("vrwa", self.vrwa),
            ("total", self.total),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    fn mean(all: &[PretrainLosses]) -> PretrainLosses {
        let n = all.len().max(1) as f64;
        let mut m = PretrainLosses::default();
        for l in all {
            m.mlm += l.mlm / n;
            m.mom += l.mom / n;
            m.ssm += l.ssm / n;
            m.orp += l.orp / n;
            m.mrwa += l.mrwa / n;
            m.vrwa += l.vrwa / n;
            m.total += l.total / n;
        }
        m
    }
}

/// The six objectives of one sample and their weighted total, on the tape.
pub fn pretrain_sample_losses<'t>(
    model: &Model,
    p: &BoundParams<'t>,
    s: &PretrainSample,
    alpha: f64,
    negatives: bool,
) -> Result<[Var<'t>; 7]> {
    let b = &s.basic;
    let out = model.forward(p, &b.tokens, &b.objects, &b.masked_objects, None)?;
    let tape = out.cls.tape();
    let zero = || tape.scalar(0.0);
    let mlm = if b.mlm_positions.is_empty() {
        zero()
    } else {
        mlm_loss(&model.mlm_logits(p, &out.words.gather_rows(&b.mlm_positions)?)?, &b.mlm_targets)?
    };
    let masked: Vec<usize> = (0..b.masked_objects.len()).filter(|&i| b.masked_objects[i]).collect();
    let mom = if masked.is_empty() {
        zero()
    } else {
        mom_loss(&model.mom_logits(p, &out.objects.gather_rows(&masked)?)?, &b.mom_targets)?
    };
    let ssm = ssm_loss(&model.ssm_logit(p, &out.cls)?, &[b.matched])?;

    let unmasked = |n: usize| vec![false; n];
    let obj = &s.object_level;
    let obj_out = model.forward(p, &obj.tokens, &obj.objects, &unmasked(obj.ids.len()), None)?;
    let room = &s.room_level;
    let room_out = model.forward(p, &room.tokens, &room.objects, &unmasked(room.ids.len()), None)?;
    let scene = &s.scene_level;
    let scene_out = model.forward(p, &scene.tokens, &scene.objects, &unmasked(scene.ids.len()), None)?;

    let orp = if room.ids.is_empty() {
        zero()
    } else {
        orp_loss(&model.relation_logits(p, &room_out.objects)?, &s.relations)?
    };
    let level = |words: &Var<'t>, objects: &Var<'t>, y| -> Result<Var<'t>> {
        match_loss(&model.match_logits(p, words, objects, MatchHead::P)?, y, negatives)
    };
    let mrwa = mrwa_loss(&[
        level(&obj_out.words, &obj_out.objects, &obj.y)?,
        level(&room_out.words, &room_out.objects, &room.y)?,
        level(&scene_out.words, &scene_out.objects, &scene.y)?,
    ])?;

    let vrwa = if obj.ids.is_empty() {
        zero()
    } else {
        let mut views = vec![obj_out.objects];
        for rotated in &s.rotated {
            views.push(model.forward(p, &obj.tokens, rotated, &unmasked(obj.ids.len()), None)?.objects);
        }
        let g = aggregate_views(&views)?;
        match_loss(&model.match_logits(p, &obj_out.words, &g, MatchHead::S)?, &obj.y, negatives)?
    };

    let total = pretrain_loss([mlm, mom, ssm], [orp, mrwa, vrwa], alpha)?;
    Ok([mlm, mom, ssm, orp, mrwa, vrwa, total])
}

fn values(v: &[Var<'_>; 7]) -> PretrainLosses {
    PretrainLosses {
        mlm: v[0].item(),
        mom: v[1].item(),
        ssm: v[2].item(),
        orp: v[3].item(),
        mrwa: v[4].item(),
        vrwa: v[5].item(),
        total: v[6].item(),
    }
}

/// Forward and backward of one sample on its own tape; gradients are scaled by `weight`.
fn sample_step(
    model: &Model,
    store: &ParamStore,
    s: &PretrainSample,
    cfg: &PretrainConfig,
    weight: f64,
) -> Result<(PretrainLosses, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let v = pretrain_sample_losses(model, &p, s, cfg.alpha, cfg.negatives)?;
    let losses = values(&v);
    let grads = v[6].scale(weight).backward()?;
    Ok((losses, p.grads(&grads)))
}

fn sample_loss(model: &Model, store: &ParamStore, s: &PretrainSample, cfg: &PretrainConfig) -> Result<PretrainLosses> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    Ok(values(&pretrain_sample_losses(model, &p, s, cfg.alpha, cfg.negatives)?))
}

fn sample_rng(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_mul(0x1_0000).wrapping_add(index));
    rng
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    /// Mean losses on the fixed evaluation samples before the first update.
    pub initial: PretrainLosses,
    /// The same samples after the last update.
    pub last: PretrainLosses,
    pub history: Vec<MetricsRecord>,
    pub checkpoint: Option<PathBuf>,
}

fn eval_losses(
    model: &Model,
    store: &ParamStore,
    samples: &[PretrainSample],
    cfg: &PretrainConfig,
) -> Result<PretrainLosses> {
    let all = samples
        .par_iter()
        .map(|s| sample_loss(model, store, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PretrainLosses::mean(&all))
}

fn checkpoint_meta(state: &TrainState, step: usize) -> CheckpointMeta {
    CheckpointMeta {
        phase: "pretrain".into(),
        step,
        model: state.model.config.clone(),
        vocab_size: state.vocab.len(),
    }
}

/// Minimizes the combined pre-training loss over the training split of
/// `records`. Samples are drawn without replacement, epoch by epoch. The
/// loss is also measured before and after on a fixed set of training samples
/// built with their own seed.
pub fn pretrain(
    state: &mut TrainState,
    records: &[CorpusRecord],
    cfg: &PretrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
    log: &mut MetricsLog,
) -> Result<PretrainReport> {
    cfg.validate()?;
    let train: Vec<CorpusRecord> = records.iter().filter(|r| r.split == Split::Train).cloned().collect();
    let train = if train.is_empty() { records.to_vec() } else { train };
    if train.is_empty() {
        return Err(Error::Invalid("pretraining needs at least one record".into()));
    }
    let eval_pool = &train;
    let sample_cfg = SampleConfig::new(&state.model.config, cfg);

    let eval_samples = (0..cfg.eval_samples)
        .map(|i| {
            let mut rng = sample_rng(seed ^ 0xe7a1, 0, i as u64);
            build_pretrain_sample(eval_pool, i % eval_pool.len(), &state.vocab, &sample_cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut history = Vec::new();
    let initial = eval_losses(&state.model, &state.store, &eval_samples, cfg)?;
    history.push(log.write("eval", 0, initial.to_map(), None)?);

    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::new();
    let mut checkpoint = None;
    for step in 1..=cfg.steps {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| {
                if order.is_empty() {
                    order = (0..train.len()).collect();
                    order.shuffle(&mut order_rng);
                }
                order.pop().expect("refilled")
            })
            .collect();
        let samples = batch
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut rng = sample_rng(seed, step as u64, i as u64);
                build_pretrain_sample(&train, r, &state.vocab, &sample_cfg, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let weight = 1.0 / samples.len() as f64;
        let (model, store) = (&state.model, &state.store);
        let results = samples
            .par_iter()
            .map(|s| sample_step(model, store, s, cfg, weight))
            .collect::<Result<Vec<_>>>()?;

        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut per_sample = Vec::with_capacity(results.len());
        for (losses, g) in results {
            per_sample.push(losses);
            if grads.is_empty() {
                grads = g;
            } else {
                for (acc, x) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                }
            }
        }
        let mean = PretrainLosses::mean(&per_sample);
        if !mean.total.is_finite() {
            return Err(Error::NonFinite(format!("pretraining loss at step {step}")));
        }
        opt.step(&mut state.store, &grads)
            .map_err(|e| Error::NonFinite(format!("at step {step}: {e}")))?;
        history.push(log.write("train", step, mean.to_map(), None)?);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("pretrain-step{step}.ckpt"));
                save_checkpoint(&state.store, &path, &checkpoint_meta(state, step))?;
            }
        }
    }

    let last = eval_losses(&state.model, &state.store, &eval_samples, cfg)?;
    history.push(log.write("eval", cfg.steps.max(1), last.to_map(), None)?);
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("pretrain.ckpt");
        save_checkpoint(&state.store, &path, &checkpoint_meta(state, cfg.steps))?;
        state.vocab.save(&dir.join("vocab.txt"))?;
        checkpoint = Some(path);
    }
    Ok(PretrainReport {
        steps: cfg.steps,
        initial,
        last,
        history,
        checkpoint,
    })
}
