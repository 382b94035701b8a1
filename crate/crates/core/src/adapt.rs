//! Synthetic-to-real adaptation: domain discriminators behind gradient
//! reversal, the grounding task loss and a deterministic "pseudo-real"
//! corruption of synthetic records.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_with_logits, concat_cols, concat_rows, cross_entropy_index, BoundParams, ParamId, ParamStore, Tensor, Var};
use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::text::{apply_rewriter, IdentityRewriter, Rewriter, SynonymSwap};

pub const SYNTHETIC: f64 = 0.0;
pub const REAL: f64 = 1.0;

/// Two-layer perceptron ending in one logit.
#[derive(Clone, Debug)]
struct Mlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl Mlp {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: store.add_glorot(format!("{name}.w1"), fan_in, hidden, rng),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add_glorot(format!("{name}.w2"), hidden, 1, rng),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(&[1])),
        }
    }

    fn logits<'t>(&self, p: &BoundParams<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let h = x.matmul(&p[self.w1])?.add_row(&p[self.b1])?.gelu();
        h.matmul(&p[self.w2])?.add_row(&p[self.b2])
    }

    fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// The vision, language and joint domain discriminators.
#[derive(Clone, Debug)]
pub struct Discriminators {
    vision: Mlp,
    language: Mlp,
    joint: Mlp,
}

impl Discriminators {
    pub fn new(d_model: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        Self {
            vision: Mlp::new(store, "disc.vision", d_model, d_model, rng),
            language: Mlp::new(store, "disc.language", d_model, d_model, rng),
            joint: Mlp::new(store, "disc.joint", 2 * d_model, d_model, rng),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.vision, &self.language, &self.joint]
            .iter()
            .flat_map(|m| m.params())
            .collect()
    }
}

fn both_domains(labels: &[f64]) -> Result<()> {
    let has = |d: f64| labels.iter().any(|&l| l == d);
    if has(SYNTHETIC) && has(REAL) {
        Ok(())
    } else {
        Err(Error::Invalid("adaptation batch must contain both domains".into()))
    }
}

/// Domain BCE of `D_v` over object tokens `[N, d]` (one label per row),
/// seen through gradient reversal with strength `lambda`.
pub fn vision_adapt_loss<'t>(
    disc: &Discriminators,
    p: &BoundParams<'t>,
    objects: &Var<'t>,
    labels: &[f64],
    lambda: f64,
) -> Result<Var<'t>> {
    both_domains(labels)?;
    let logits = disc.vision.logits(p, &objects.grl(lambda)?)?;
    bce_with_logits(&logits, &Tensor::vector(labels.to_vec()))
}

/// Domain BCE of `D_l` over sentence tokens `[B, d]`.
pub fn lang_adapt_loss<'t>(
    disc: &Discriminators,
    p: &BoundParams<'t>,
    sentences: &Var<'t>,
    labels: &[f64],
    lambda: f64,
) -> Result<Var<'t>> {
    both_domains(labels)?;
    let logits = disc.language.logits(p, &sentences.grl(lambda)?)?;
    bce_with_logits(&logits, &Tensor::vector(labels.to_vec()))
}

/// Domain BCE of `D_joint` over `[sentence; pooled objects]` rows `[B, 2d]`.
pub fn joint_adapt_loss<'t>(
    disc: &Discriminators,
    p: &BoundParams<'t>,
    sentences: &Var<'t>,
    pooled_objects: &Var<'t>,
    labels: &[f64],
    lambda: f64,
) -> Result<Var<'t>> {
    both_domains(labels)?;
    let x = concat_cols(&[*sentences, *pooled_objects])?;
    let logits = disc.joint.logits(p, &x.grl(lambda)?)?;
    bce_with_logits(&logits, &Tensor::vector(labels.to_vec()))
}

/// Mean of the word rows; the sentence token.
pub fn sentence_token<'t>(words: &Var<'t>) -> Result<Var<'t>> {
    words.mean_rows()
}

/// Fused outputs of one sample, as consumed by the adaptation losses.
#[derive(Clone, Copy, Debug)]
pub struct DomainSample<'t> {
    pub words: Var<'t>,
    pub objects: Var<'t>,
    pub domain: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct AlignLosses<'t> {
    pub vision: Var<'t>,
    pub language: Var<'t>,
    pub joint: Var<'t>,
    pub total: Var<'t>,
}

/// `L_vision + L_lang + L_joint` over a mixed batch. With `pooled_vision`
/// the vision discriminator sees one mean-pooled row per sample instead of
/// every object token.
pub fn align_loss<'t>(
    disc: &Discriminators,
    p: &BoundParams<'t>,
    batch: &[DomainSample<'t>],
    lambda: f64,
    pooled_vision: bool,
) -> Result<AlignLosses<'t>> {
    let mut sentences = Vec::new();
    let mut pooled = Vec::new();
    let mut tokens = Vec::new();
    let mut token_labels = Vec::new();
    let mut labels = Vec::new();
    for s in batch {
        if s.words.dims2().0 == 0 || s.objects.dims2().0 == 0 {
            return Err(Error::Invalid("adaptation samples need words and objects".into()));
        }
        sentences.push(sentence_token(&s.words)?);
        pooled.push(s.objects.mean_rows()?);
        tokens.push(s.objects);
        token_labels.extend(std::iter::repeat(s.domain).take(s.objects.dims2().0));
        labels.push(s.domain);
    }
    let sentences = concat_rows(&sentences)?;
    let pooled = concat_rows(&pooled)?;
    let vision = if pooled_vision {
        vision_adapt_loss(disc, p, &pooled, &labels, lambda)?
    } else {
        vision_adapt_loss(disc, p, &concat_rows(&tokens)?, &token_labels, lambda)?
    };
    let language = lang_adapt_loss(disc, p, &sentences, &labels, lambda)?;
    let joint = joint_adapt_loss(disc, p, &sentences, &pooled, &labels, lambda)?;
    let total = vision.add(&language)?.add(&joint)?;
    Ok(AlignLosses {
        vision,
        language,
        joint,
        total,
    })
}

/// Cross-entropy of the grounding logits `scale * <CLS, O_j>` against the target object.
pub fn grounding_task_loss<'t>(
    model: &Model,
    p: &BoundParams<'t>,
    cls: &Var<'t>,
    objects: &Var<'t>,
    target: usize,
) -> Result<Var<'t>> {
    let m = objects.dims2().0;
    if target >= m {
        return Err(Error::Invalid(format!("target {target} out of range for {m} objects")));
    }
    cross_entropy_index(&model.grounding_logits(p, cls, objects)?, &[target])
}

/// `beta L_task + (1 - beta) L_align`.
pub fn finetune_loss<'t>(task: &Var<'t>, align: &Var<'t>, beta: f64) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Invalid(format!("beta {beta} outside [0, 1]")));
    }
    task.scale(beta).add(&align.scale(1.0 - beta))
}

/// `[shift]` table of the run config: the corruption that turns synthetic
/// records into pseudo-real ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    /// Standard deviation of per-point Gaussian jitter, meters.
    pub jitter: f64,
    /// Fraction of points removed.
    pub point_dropout: f64,
    /// Relative box-size noise, drawn uniformly from `[-size_noise, size_noise]` per axis.
    pub size_noise: f64,
    /// Apply the synonym-swap rewriter to every description.
    pub rewrite: bool,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            jitter: 0.02,
            point_dropout: 0.2,
            size_noise: 0.05,
            rewrite: true,
            seed: 17,
        }
    }
}

impl ShiftConfig {
    pub fn none() -> Self {
        Self {
            jitter: 0.0,
            point_dropout: 0.0,
            size_noise: 0.0,
            rewrite: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !(0.0..1.0).contains(&self.point_dropout) || !(0.0..1.0).contains(&self.size_noise) {
            return Err(Error::Config(
                "shift: jitter must be >= 0, point_dropout and size_noise in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct PseudoReal {
    pub records: Vec<CorpusRecord>,
    /// Records dropped because a rewrite lost identifiers.
    pub skipped: usize,
}

/// Applies the domain shift record by record. Boxes keep their bottom face
/// so supported objects still sit on their supporters; graphs and spans are
/// kept, and rewritten descriptions must pass identifier validation.
pub fn make_pseudo_real(records: &[CorpusRecord], shift: &ShiftConfig) -> Result<PseudoReal> {
    make_pseudo_real_with(records, shift, None)
}

pub fn make_pseudo_real_with(
    records: &[CorpusRecord],
    shift: &ShiftConfig,
    rewriter: Option<&dyn Rewriter>,
) -> Result<PseudoReal> {
    shift.validate()?;
    let mut out = PseudoReal::default();
    let jitter = Normal::new(0.0, shift.jitter.max(f64::MIN_POSITIVE)).expect("positive std");
    'records: for rec in records {
        let mut rng = ChaCha8Rng::seed_from_u64(shift.seed ^ rec.scene.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut r = rec.clone();
        let synonyms = SynonymSwap::new(shift.seed ^ rec.scene.seed);
        let rewriter: &dyn Rewriter = match rewriter {
            Some(rw) => rw,
            None if shift.rewrite => &synonyms,
            None => &IdentityRewriter,
        };
        // Height changes propagate to whatever rests on the box.
        let mut lift: Vec<(u32, f64)> = Vec::new();
        for inst in &mut r.scene.instances {
            let dz = inst
                .supported_by
                .and_then(|s| lift.iter().find(|(id, _)| *id == s).map(|&(_, d)| d))
                .unwrap_or(0.0);
            let before_top = inst.obb.top();
            let mut shift_z = 0.0;
            if shift.size_noise > 0.0 || dz != 0.0 {
                let bottom = inst.obb.bottom() + dz;
                for k in 0..3 {
                    inst.obb.size[k] *= 1.0 + rng.gen_range(-shift.size_noise..=shift.size_noise);
                }
                let z = bottom + 0.5 * inst.obb.size[2];
                shift_z = z - inst.obb.center[2];
                inst.obb.center[2] = z;
            }
            lift.push((inst.id, inst.obb.top() - before_top));
            let mut pts = Vec::with_capacity(inst.points.len());
            for p in &inst.points {
                if shift.point_dropout > 0.0 && rng.gen_bool(shift.point_dropout) {
                    continue;
                }
                let mut q = *p;
                q[2] += shift_z;
                if shift.jitter > 0.0 {
                    for c in &mut q {
                        *c += rng.sample(jitter);
                    }
                }
                pts.push(q);
            }
            inst.points = pts;
        }
        for d in &mut r.descriptions {
            let (rewritten, report) = apply_rewriter(d, rewriter)?;
            if !report.passed() {
                out.skipped += 1;
                continue 'records;
            }
            *d = rewritten;
        }
        for d in &r.descriptions {
            d.validate(Some(&r.scene))?;
        }
        r.scene_graph.validate()?;
        out.records.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::corpus::RecordBuilder;
    use crate::graph::RelationThresholds;
    use crate::scene::{Catalog, GenerationConfig};

    fn records(n: usize) -> Vec<CorpusRecord> {
        let gen = GenerationConfig {
            points_per_object: 32,
            ..GenerationConfig::default()
        };
        let cat = Catalog::default();
        let rel = RelationThresholds::default();
        RecordBuilder {
            generation: &gen,
            catalog: &cat,
            relations: &rel,
            max_relations: 6,
        }
        .build_many(100, n)
        .unwrap()
    }

    #[test]
    fn zero_shift_is_identity() {
        let recs = records(3);
        let out = make_pseudo_real(&recs, &ShiftConfig::none()).unwrap();
        assert_eq!(out.records, recs);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn default_shift_keeps_support_contact_and_identifiers() {
        let recs = records(5);
        let out = make_pseudo_real(&recs, &ShiftConfig::default()).unwrap();
        assert_eq!(out.records.len(), 5);
        for r in &out.records {
            for inst in &r.scene.instances {
                if let Some(s) = inst.supported_by {
                    let sup = r.scene.instance(s).unwrap();
                    assert!((inst.obb.bottom() - sup.obb.top()).abs() < 1e-6);
                }
            }
        }
        let again = make_pseudo_real(&recs, &ShiftConfig::default()).unwrap();
        assert_eq!(again.records, out.records);
    }

    #[test]
    fn single_domain_batch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let disc = Discriminators::new(4, &mut store, &mut rng);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.var(Tensor::zeros(&[2, 4]));
        assert!(vision_adapt_loss(&disc, &p, &x, &[0.0, 0.0], 1.0).is_err());
        assert!(vision_adapt_loss(&disc, &p, &x, &[0.0, 1.0], 1.0).is_ok());
    }

    #[test]
    fn finetune_weights() {
        let tape = Tape::new();
        let t = tape.scalar(1.0);
        let a = tape.scalar(0.5);
        assert!((finetune_loss(&t, &a, 0.8).unwrap().item() - 0.9).abs() < 1e-12);
        assert!(finetune_loss(&t, &a, 1.5).is_err());
    }
}
