//! Finite-difference checks of every training loss on a micro model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapt::{
    align_loss, finetune_loss, grounding_task_loss, joint_adapt_loss, lang_adapt_loss, make_pseudo_real,
    sentence_token, vision_adapt_loss, Discriminators, DomainSample, ShiftConfig, REAL, SYNTHETIC,
};
use crate::autodiff::{
    concat_rows, grad_check_shared, BoundParams, GradCheckReport, MultiLossFn, ParamStore, SharedTarget, Var, DEFAULT_STEP,
};
use crate::corpus::{CorpusRecord, RecordBuilder};
use crate::error::Result;
use crate::graph::RelationThresholds;
use crate::model::{Model, ModelConfig, Vocab};
use crate::scene::{Catalog, GenerationConfig};
use crate::train::{
    build_grounding_samples, build_pretrain_sample, pretrain_sample_losses, GroundingSample, PretrainConfig,
    PretrainSample, SampleConfig,
};

/// Maximum relative error accepted by [`gradient_suite`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }
}

struct Fixture {
    model: Model,
    disc: Discriminators,
    store: ParamStore,
    sample: PretrainSample,
    real: Vec<GroundingSample>,
    synthetic: Vec<GroundingSample>,
}

fn small_record(seed: u64) -> Result<CorpusRecord> {
    let catalog = Catalog::default();
    let generation = GenerationConfig {
        rooms: [1, 1],
        instances_per_room: [4, 5],
        points_per_object: 16,
        ..GenerationConfig::default()
    };
    RecordBuilder {
        generation: &generation,
        catalog: &catalog,
        relations: &RelationThresholds::default(),
        max_relations: 1,
    }
    .build(seed)
}

fn fixture(seed: u64) -> Result<Fixture> {
    let record = small_record(seed)?;
    let vocab = Vocab::build(record.descriptions.iter().flat_map(|d| d.text.iter().map(String::as_str)));
    let config = ModelConfig::micro();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let model = Model::new(config.clone(), vocab.len(), &mut store, &mut rng)?;
    let disc = Discriminators::new(config.d_model, &mut store, &mut rng);
    let sample_cfg = SampleConfig::new(&config, &PretrainConfig::default());
    let records = [record.clone(), small_record(seed + 1)?];
    let sample = build_pretrain_sample(&records, 0, &vocab, &sample_cfg, &mut rng)?;
    let grounding = |r: &CorpusRecord| {
        build_grounding_samples(std::slice::from_ref(r), &vocab, config.max_text_len, config.max_objects, config.categories)
    };
    let shifted = make_pseudo_real(std::slice::from_ref(&record), &ShiftConfig::default())?;
    let mut real = grounding(&shifted.records[0])?;
    let mut synthetic = grounding(&record)?;
    real.truncate(2);
    synthetic.truncate(2);
    Ok(Fixture {
        model,
        disc,
        store,
        sample,
        real,
        synthetic,
    })
}

fn run<'t>(
    fx: &Fixture,
    p: &BoundParams<'t>,
) -> Result<(Vec<DomainSample<'t>>, Vec<Var<'t>>)> {
    let mut domains = Vec::new();
    let mut tasks = Vec::new();
    for (samples, domain) in [(&fx.real, REAL), (&fx.synthetic, SYNTHETIC)] {
        for s in samples.iter() {
            let out = fx.model.forward(p, &s.tokens, &s.objects, &vec![false; s.objects.len()], None)?;
            if domain == REAL {
                tasks.push(grounding_task_loss(&fx.model, p, &out.cls, &out.objects, s.target)?);
            }
            domains.push(DomainSample {
                words: out.words,
                objects: out.objects,
                domain,
            });
        }
    }
    Ok((domains, tasks))
}

fn mean<'t>(xs: &[Var<'t>]) -> Result<Var<'t>> {
    Ok(xs[1..].iter().try_fold(xs[0], |a, x| a.add(x))?.scale(1.0 / xs.len() as f64))
}

/// Runs one finite-difference check per loss: the six pre-training
/// objectives and their weighted sum, the three discriminator losses, the
/// alignment sum, the grounding loss and the fine-tuning sum. Graphs that pass
/// through gradient reversal are compared with the reversed numeric derivative.
pub fn gradient_suite(seed: u64) -> Result<Vec<NamedCheck>> {
    let mut fx = fixture(seed)?;
    let alpha = 0.5;
    let mut out = Vec::new();

    let pretrain_names = ["mlm", "mom", "ssm", "orp", "mrwa", "vrwa", "pretrain_total"];
    let mut store = std::mem::take(&mut fx.store);
    let fx = &fx;
    let pretrain: Box<MultiLossFn<'_>> =
        Box::new(|_, p| Ok(pretrain_sample_losses(&fx.model, p, &fx.sample, alpha, true)?.to_vec()));
    let targets: Vec<SharedTarget> = (0..pretrain_names.len()).map(SharedTarget::plain).collect();
    let reports = grad_check_shared(&mut store, DEFAULT_STEP, &*pretrain, &targets)?;
    out.extend(pretrain_names.into_iter().zip(reports).map(|(name, report)| NamedCheck { name, report }));

    // Gradient reversal makes encoder-side gradients of the adaptation
    // losses equal to -lambda times the true derivative.
    let lambda = 1.0;
    let beta = 0.8;
    let reversed = move |name: &str| if name.starts_with("disc.") { 1.0 } else { -lambda };

    let finetune: Box<MultiLossFn<'_>> = Box::new(|_, p| {
        let (d, tasks) = run(fx, p)?;
        let sentences = concat_rows(&d.iter().map(|s| sentence_token(&s.words)).collect::<Result<Vec<_>>>()?)?;
        let per_sample: Vec<f64> = d.iter().map(|s| s.domain).collect();

        let tokens = concat_rows(&d.iter().map(|s| s.objects).collect::<Vec<_>>())?;
        let per_token: Vec<f64> = d
            .iter()
            .flat_map(|s| std::iter::repeat(s.domain).take(s.objects.dims2().0))
            .collect();
        let vision = vision_adapt_loss(&fx.disc, p, &tokens, &per_token, lambda)?;
        let language = lang_adapt_loss(&fx.disc, p, &sentences, &per_sample, lambda)?;
        let pooled = concat_rows(&d.iter().map(|s| s.objects.mean_rows()).collect::<Result<Vec<_>>>()?)?;
        let joint = joint_adapt_loss(&fx.disc, p, &sentences, &pooled, &per_sample, lambda)?;
        let align = align_loss(&fx.disc, p, &d, lambda, false)?.total;
        let task = mean(&tasks)?;
        let total = finetune_loss(&task, &align, beta)?;
        Ok(vec![vision, language, joint, align, task, total])
    });
    let reversed_at = |output: usize| SharedTarget {
        output,
        weights: Box::new(move |name: &str| {
            let mut w = vec![0.0; output + 1];
            w[output] = reversed(name);
            w
        }),
    };
    let targets = vec![
        reversed_at(0),
        reversed_at(1),
        reversed_at(2),
        reversed_at(3),
        SharedTarget::plain(4),
        SharedTarget {
            output: 5,
            weights: Box::new(move |name: &str| vec![0.0, 0.0, 0.0, (1.0 - beta) * reversed(name), beta]),
        },
    ];
    let reports = grad_check_shared(&mut store, DEFAULT_STEP, &*finetune, &targets)?;
    let names = ["vision", "language", "joint", "align", "task", "finetune_total"];
    out.extend(names.into_iter().zip(reports).map(|(name, report)| NamedCheck { name, report }));
    Ok(out)
}
