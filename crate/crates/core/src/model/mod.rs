//! Text encoder, object encoder, cross-modal fusion transformer and the
//! small prediction heads used by the training objectives.

mod vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use vocab::{Vocab, CLS, MASK, PAD, UNK};

use crate::autodiff::{concat_cols, concat_rows, linear, BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scene::{Instance, Scene};

/// `[model]` table of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub fusion_layers: usize,
    pub text_layers: usize,
    pub ff_width: usize,
    /// Longest token sequence, not counting [CLS].
    pub max_text_len: usize,
    pub max_objects: usize,
    /// Relation classes predicted by the pair head, including "none".
    pub relation_classes: usize,
    pub categories: usize,
    /// Rotated views averaged for view-aggregated alignment.
    pub views: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            fusion_layers: 2,
            text_layers: 1,
            ff_width: 128,
            max_text_len: 64,
            max_objects: 24,
            relation_classes: crate::graph::RelationLabel::COUNT,
            categories: 108,
            views: 4,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for finite-difference checks.
    pub fn micro() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            fusion_layers: 1,
            text_layers: 1,
            ff_width: 12,
            max_text_len: 6,
            max_objects: 4,
            relation_classes: crate::graph::RelationLabel::COUNT,
            categories: 108,
            views: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.views == 0 {
            return err("views must be at least 1".into());
        }
        if self.ff_width == 0 || self.relation_classes < 2 || self.categories == 0 {
            return err("ff_width, relation_classes and categories must be positive".into());
        }
        Ok(())
    }
}

/// Per-object geometry: center (3), size (3), sin/cos yaw (2), point mean (3), point std (3).
pub const RAW_OBJECT_FEATURES: usize = 14;

pub fn raw_object_features(inst: &Instance) -> [f64; RAW_OBJECT_FEATURES] {
    let mut f = [0.0; RAW_OBJECT_FEATURES];
    f[..3].copy_from_slice(&inst.obb.center);
    f[3..6].copy_from_slice(&inst.obb.size);
    f[6] = inst.obb.yaw.sin();
    f[7] = inst.obb.yaw.cos();
    let n = inst.points.len();
    if n > 0 {
        for k in 0..3 {
            let mean = inst.points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            let var = inst.points.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n as f64;
            f[8 + k] = mean;
            f[11 + k] = var.sqrt();
        }
    }
    f
}

/// Encoder inputs for a list of objects.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectFeatures {
    pub raw: Vec<[f64; RAW_OBJECT_FEATURES]>,
    pub categories: Vec<usize>,
}

impl ObjectFeatures {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

pub fn object_features(scene: &Scene, ids: &[u32], num_categories: usize) -> Result<ObjectFeatures> {
    let mut out = ObjectFeatures::default();
    for &id in ids {
        let inst = scene.instance(id).ok_or_else(|| Error::Unknown {
            kind: "instance",
            name: id.to_string(),
        })?;
        if inst.category >= num_categories {
            return Err(Error::Unknown {
                kind: "category",
                name: inst.category.to_string(),
            });
        }
        out.raw.push(raw_object_features(inst));
        out.categories.push(inst.category);
    }
    Ok(out)
}

/// Which positions of the fused sequence `[CLS, words.., objects..]` may
/// attend to which. Row `i` lists what position `i` sees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    size: usize,
    visible: Vec<bool>,
}

impl AttentionMask {
    pub fn all(size: usize) -> Self {
        Self {
            size,
            visible: vec![true; size * size],
        }
    }

    /// Text positions (CLS and words) cannot see any object.
    pub fn text_blind(words: usize, objects: usize) -> Self {
        let mut m = Self::all(1 + words + objects);
        for i in 0..=words {
            for j in 0..objects {
                m.set(i, 1 + words + j, false);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn set(&mut self, i: usize, j: usize, visible: bool) {
        self.visible[i * self.size + j] = visible;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.visible
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutput<'t> {
    /// `[1, d]`
    pub cls: Var<'t>,
    /// `[L, d]`
    pub words: Var<'t>,
    /// `[M, d]`
    pub objects: Var<'t>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchHead {
    /// Region-word matching at a single view.
    P,
    /// Region-word matching against view-aggregated features.
    S,
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add_glorot(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    fn apply<'t>(&self, p: &BoundParams<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        linear(x, &p[self.w], &p[self.b])
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[d], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[d])),
        }
    }

    fn apply<'t>(&self, p: &BoundParams<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(1e-5).mul_row(&p[self.gain])?.add_row(&p[self.bias])
    }
}

/// Post-norm transformer layer.
#[derive(Clone, Debug)]
struct Layer {
    q: Dense,
    // Keys carry no bias: a key bias shifts every score in a row equally and
    // cancels in the softmax.
    k: ParamId,
    v: Dense,
    o: Dense,
    norm1: Norm,
    ff1: Dense,
    ff2: Dense,
    norm2: Norm,
    heads: usize,
}

impl Layer {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        Self {
            q: Dense::new(store, &format!("{name}.q"), d, d, rng),
            k: store.add_glorot(format!("{name}.k.w"), d, d, rng),
            v: Dense::new(store, &format!("{name}.v"), d, d, rng),
            o: Dense::new(store, &format!("{name}.o"), d, d, rng),
            norm1: Norm::new(store, &format!("{name}.norm1"), d),
            ff1: Dense::new(store, &format!("{name}.ff1"), d, cfg.ff_width, rng),
            ff2: Dense::new(store, &format!("{name}.ff2"), cfg.ff_width, d, rng),
            norm2: Norm::new(store, &format!("{name}.norm2"), d),
            heads: cfg.heads,
        }
    }

    fn attention<'t>(&self, p: &BoundParams<'t>, x: &Var<'t>, mask: Option<&AttentionMask>) -> Result<Var<'t>> {
        let (n, d) = x.dims2();
        let dh = d / self.heads;
        let q = self.q.apply(p, x)?;
        let k = x.matmul(&p[self.k])?;
        let v = self.v.apply(p, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let scores = q.slice_cols(a, b)?.matmul(&k.slice_cols(a, b)?.transpose()?)?.scale(scale);
            let weights = match mask {
                Some(m) => {
                    if m.size() != n {
                        return Err(Error::shape("attention mask", &[n, n], &[m.size(), m.size()]));
                    }
                    scores.masked_softmax(m.as_slice())?
                }
                None => scores.softmax(),
            };
            outs.push(weights.matmul(&v.slice_cols(a, b)?)?);
        }
        self.o.apply(p, &concat_cols(&outs)?)
    }

    fn forward<'t>(&self, p: &BoundParams<'t>, x: &Var<'t>, mask: Option<&AttentionMask>) -> Result<Var<'t>> {
        let h = self.norm1.apply(p, &x.add(&self.attention(p, x, mask)?)?)?;
        let f = self.ff2.apply(p, &self.ff1.apply(p, &h)?.gelu())?;
        self.norm2.apply(p, &h.add(&f)?)
    }
}

/// Sinusoidal position table `[n, d]`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, d]);
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            t.set(pos, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    t
}

/// Parameter handles of the full model; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
    tokens: ParamId,
    segments: ParamId,
    text_layers: Vec<Layer>,
    object_in: Dense,
    category_embedding: ParamId,
    mask_vector: ParamId,
    fusion: Vec<Layer>,
    relation_hidden: Dense,
    relation_out: Dense,
    p_temperature: ParamId,
    p_bias: ParamId,
    s_temperature: ParamId,
    s_bias: ParamId,
    mlm: Dense,
    mom: Dense,
    ssm: Dense,
    grounding_scale: ParamId,
}

impl Model {
    /// Registers all parameters in `store`.
    pub fn new(config: ModelConfig, vocab_size: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let std = (1.0 / d as f64).sqrt();
        let tokens = store.add_normal("text.tokens", &[vocab_size, d], 1.0, rng);
        let segments = store.add_normal("segments", &[2, d], std, rng);
        let text_layers = (0..config.text_layers)
            .map(|i| Layer::new(store, &format!("text.{i}"), &config, rng))
            .collect();
        let object_in = Dense::new(store, "object.in", RAW_OBJECT_FEATURES, d, rng);
        let category_embedding = store.add_normal("object.category", &[config.categories, d], 1.0, rng);
        let mask_vector = store.add_normal("object.mask", &[1, d], std, rng);
        let fusion = (0..config.fusion_layers)
            .map(|i| Layer::new(store, &format!("fusion.{i}"), &config, rng))
            .collect();
        let relation_hidden = Dense::new(store, "head.r.hidden", 3 * d, d, rng);
        let relation_out = Dense::new(store, "head.r.out", d, config.relation_classes, rng);
        let p_temperature = store.add("head.p.temperature", Tensor::scalar(1.0));
        let p_bias = store.add("head.p.bias", Tensor::scalar(0.0));
        let s_temperature = store.add("head.s.temperature", Tensor::scalar(1.0));
        let s_bias = store.add("head.s.bias", Tensor::scalar(0.0));
        let mlm = Dense::new(store, "head.mlm", d, vocab_size, rng);
        let mom = Dense::new(store, "head.mom", d, config.categories, rng);
        let ssm = Dense::new(store, "head.ssm", d, 1, rng);
        let grounding_scale = store.add("head.grounding.scale", Tensor::scalar(1.0));
        Ok(Self {
            config,
            vocab_size,
            tokens,
            segments,
            text_layers,
            object_in,
            category_embedding,
            mask_vector,
            fusion,
            relation_hidden,
            relation_out,
            p_temperature,
            p_bias,
            s_temperature,
            s_bias,
            mlm,
            mom,
            ssm,
            grounding_scale,
        })
    }

    fn segment<'t>(&self, p: &BoundParams<'t>, which: usize) -> Result<Var<'t>> {
        p[self.segments].slice_rows(which, which + 1)
    }

    /// `[1 + L, d]`: the [CLS] row followed by one row per token.
    pub fn encode_text<'t>(&self, p: &BoundParams<'t>, tokens: &[usize]) -> Result<Var<'t>> {
        if tokens.len() > self.config.max_text_len {
            return Err(Error::Invalid(format!(
                "text of {} tokens exceeds the limit of {}",
                tokens.len(),
                self.config.max_text_len
            )));
        }
        let tape = p[self.tokens].tape();
        let ids: Vec<usize> = std::iter::once(CLS).chain(tokens.iter().copied()).collect();
        let pos = tape.constant(positional_encoding(ids.len(), self.config.d_model));
        let mut x = p[self.tokens]
            .gather_rows(&ids)?
            .add(&pos)?
            .add_row(&self.segment(p, 0)?)?;
        for layer in &self.text_layers {
            x = layer.forward(p, &x, None)?;
        }
        Ok(x)
    }

    /// `[M, d]` object tokens. Rows with `masked[i]` set are replaced by the
    /// learned mask vector before the segment embedding is added.
    pub fn encode_objects<'t>(&self, p: &BoundParams<'t>, objects: &ObjectFeatures, masked: &[bool]) -> Result<Var<'t>> {
        let m = objects.len();
        if m > self.config.max_objects {
            return Err(Error::Invalid(format!("{m} objects exceed the limit of {}", self.config.max_objects)));
        }
        if masked.len() != m {
            return Err(Error::shape("encode_objects", &[m], &[masked.len()]));
        }
        let tape = p[self.tokens].tape();
        if m == 0 {
            return Ok(tape.constant(Tensor::zeros(&[0, self.config.d_model])));
        }
        if let Some(&c) = objects.categories.iter().find(|&&c| c >= self.config.categories) {
            return Err(Error::Unknown {
                kind: "category",
                name: c.to_string(),
            });
        }
        let raw = Tensor::new(&[m, RAW_OBJECT_FEATURES], objects.raw.iter().flatten().copied().collect())?;
        let mut x = self
            .object_in
            .apply(p, &tape.constant(raw))?
            .add(&p[self.category_embedding].gather_rows(&objects.categories)?)?;
        if masked.iter().any(|&b| b) {
            let rows: Vec<usize> = masked.iter().enumerate().map(|(i, &b)| if b { m } else { i }).collect();
            x = concat_rows(&[x, p[self.mask_vector]])?.gather_rows(&rows)?;
        }
        x.add_row(&self.segment(p, 1)?)
    }

    /// Runs the fusion transformer over `[text; objects]` and splits the result.
    pub fn fuse<'t>(
        &self,
        p: &BoundParams<'t>,
        text: &Var<'t>,
        objects: &Var<'t>,
        mask: Option<&AttentionMask>,
    ) -> Result<FusionOutput<'t>> {
        let (t, d) = text.dims2();
        let (m, od) = objects.dims2();
        if t == 0 || d != od {
            return Err(Error::shape("fuse", &text.shape(), &objects.shape()));
        }
        let mut x = if m == 0 { *text } else { concat_rows(&[*text, *objects])? };
        if let Some(mask) = mask {
            if mask.size() != t + m {
                return Err(Error::shape("fuse mask", &[t + m, t + m], &[mask.size(), mask.size()]));
            }
        }
        for layer in &self.fusion {
            x = layer.forward(p, &x, mask)?;
        }
        Ok(FusionOutput {
            cls: x.slice_rows(0, 1)?,
            words: x.slice_rows(1, t)?,
            objects: x.slice_rows(t, t + m)?,
        })
    }

    /// Encode text and objects, then fuse.
    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t>,
        tokens: &[usize],
        objects: &ObjectFeatures,
        masked_objects: &[bool],
        mask: Option<&AttentionMask>,
    ) -> Result<FusionOutput<'t>> {
        let text = self.encode_text(p, tokens)?;
        let objs = self.encode_objects(p, objects, masked_objects)?;
        self.fuse(p, &text, &objs, mask)
    }

    /// `[M * M, K]` relation logits; row `i * M + j` scores the pair `(i, j)`.
    pub fn relation_logits<'t>(&self, p: &BoundParams<'t>, objects: &Var<'t>) -> Result<Var<'t>> {
        let (m, _) = objects.dims2();
        if m == 0 {
            let tape = objects.tape();
            return Ok(tape.constant(Tensor::zeros(&[0, self.config.relation_classes])));
        }
        let left: Vec<usize> = (0..m * m).map(|r| r / m).collect();
        let right: Vec<usize> = (0..m * m).map(|r| r % m).collect();
        let a = objects.gather_rows(&left)?;
        let b = objects.gather_rows(&right)?;
        let pair = concat_cols(&[a, b, a.mul(&b)?])?;
        self.relation_out.apply(p, &self.relation_hidden.apply(p, &pair)?.gelu())
    }

    /// `[L, M]` logits of `sigmoid(tau * <x_i, z_j> / sqrt(d) + b)`.
    pub fn match_logits<'t>(&self, p: &BoundParams<'t>, x: &Var<'t>, z: &Var<'t>, head: MatchHead) -> Result<Var<'t>> {
        let (l, d) = x.dims2();
        let (m, _) = z.dims2();
        if l == 0 || m == 0 {
            return Ok(x.tape().constant(Tensor::zeros(&[l, m])));
        }
        let (tau, bias) = match head {
            MatchHead::P => (self.p_temperature, self.p_bias),
            MatchHead::S => (self.s_temperature, self.s_bias),
        };
        x.matmul(&z.transpose()?)?
            .scale(1.0 / (d as f64).sqrt())
            .scale_by(&p[tau])?
            .add_scalar_var(&p[bias])
    }

    /// `[n, vocab]` token logits.
    pub fn mlm_logits<'t>(&self, p: &BoundParams<'t>, words: &Var<'t>) -> Result<Var<'t>> {
        self.mlm.apply(p, words)
    }

    /// `[n, C]` category logits.
    pub fn mom_logits<'t>(&self, p: &BoundParams<'t>, objects: &Var<'t>) -> Result<Var<'t>> {
        self.mom.apply(p, objects)
    }

    /// `[1, 1]` scene-text match logit from [CLS].
    pub fn ssm_logit<'t>(&self, p: &BoundParams<'t>, cls: &Var<'t>) -> Result<Var<'t>> {
        self.ssm.apply(p, cls)
    }

    /// `[1, M]` logits `scale * <cls, O_j> / sqrt(d)`.
    pub fn grounding_logits<'t>(&self, p: &BoundParams<'t>, cls: &Var<'t>, objects: &Var<'t>) -> Result<Var<'t>> {
        let (_, d) = cls.dims2();
        cls.matmul(&objects.transpose()?)?
            .scale(1.0 / (d as f64).sqrt())
            .scale_by(&p[self.grounding_scale])
    }

    /// Output-side parameters of every residual branch, for tests that need
    /// the branches switched off.
    pub fn residual_outputs(&self) -> Vec<ParamId> {
        self.text_layers
            .iter()
            .chain(&self.fusion)
            .flat_map(|l| [l.o.w, l.o.b, l.ff2.w, l.ff2.b])
            .collect()
    }
}

/// A tape-free evaluation helper: runs `f` on a fresh tape and returns its scalar.
pub fn evaluate<F>(store: &ParamStore, f: F) -> Result<f64>
where
    F: for<'t> FnOnce(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let p = store.bind(&tape);
    Ok(f(&tape, &p)?.item())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::grad_check;

    fn setup(cfg: ModelConfig) -> (Model, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let model = Model::new(cfg, 20, &mut store, &mut rng).unwrap();
        (model, store)
    }

    fn feats(m: usize) -> ObjectFeatures {
        ObjectFeatures {
            raw: (0..m)
                .map(|i| {
                    let mut f = [0.1; RAW_OBJECT_FEATURES];
                    f[0] = i as f64;
                    f
                })
                .collect(),
            categories: (0..m).map(|i| i * 3).collect(),
        }
    }

    #[test]
    fn shapes_follow_lengths() {
        let (model, store) = setup(ModelConfig::micro());
        let tape = Tape::new();
        let p = store.bind(&tape);
        for (l, m) in [(0, 0), (3, 0), (0, 2), (5, 4)] {
            let tokens: Vec<usize> = (0..l).map(|i| 4 + i).collect();
            let out = model.forward(&p, &tokens, &feats(m), &vec![false; m], None).unwrap();
            assert_eq!(out.cls.shape(), vec![1, 8]);
            assert_eq!(out.words.shape(), vec![l, 8]);
            assert_eq!(out.objects.shape(), vec![m, 8]);
        }
        assert!(model.encode_text(&p, &[4; 7]).is_err());
    }

    #[test]
    fn positions_matter() {
        let (model, store) = setup(ModelConfig::micro());
        let tape = Tape::new();
        let p = store.bind(&tape);
        let a = model.encode_text(&p, &[4, 5, 6]).unwrap().value();
        let b = model.encode_text(&p, &[5, 4, 6]).unwrap().value();
        let again = model.encode_text(&p, &[4, 5, 6]).unwrap().value();
        assert_eq!(a, again);
        assert_ne!(a, b);
    }

    #[test]
    fn text_blind_mask_hides_objects() {
        let (model, store) = setup(ModelConfig::micro());
        let tape = Tape::new();
        let p = store.bind(&tape);
        let mask = AttentionMask::text_blind(3, 2);
        let mut f = feats(2);
        let w1 = model.forward(&p, &[4, 5, 6], &f, &[false, false], Some(&mask)).unwrap();
        f.raw[1][2] += 3.0;
        f.categories[0] = 50;
        let w2 = model.forward(&p, &[4, 5, 6], &f, &[false, false], Some(&mask)).unwrap();
        assert_eq!(w1.words.value(), w2.words.value());
        assert_ne!(w1.objects.value(), w2.objects.value());
    }

    #[test]
    fn zeroed_residual_branches_only_normalize() {
        let (model, mut store) = setup(ModelConfig::micro());
        for id in model.residual_outputs() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let p = store.bind(&tape);
        let text = model.encode_text(&p, &[4, 5]).unwrap();
        let objs = model.encode_objects(&p, &feats(2), &[false, false]).unwrap();
        let out = model.fuse(&p, &text, &objs, None).unwrap();
        let input = concat_rows(&[text, objs]).unwrap().layer_norm(1e-5).value();
        let got = concat_rows(&[out.cls, out.words, out.objects]).unwrap().value();
        for (a, b) in input.data().iter().zip(got.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn relation_head_is_a_distribution_and_p_prefers_self() {
        let (model, store) = setup(ModelConfig::micro());
        let tape = Tape::new();
        let p = store.bind(&tape);
        let objs = model.encode_objects(&p, &feats(3), &[false; 3]).unwrap();
        let r = model.relation_logits(&p, &objs).unwrap().softmax().value();
        assert_eq!(r.shape(), &[9, 16]);
        for i in 0..9 {
            assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let x = tape.constant(Tensor::new(&[1, 8], vec![0.3; 8]).unwrap());
        let logit = model.match_logits(&p, &x, &x, MatchHead::P).unwrap().item();
        assert!(crate::autodiff::sigmoid(logit) > 0.5);
    }

    #[test]
    fn identical_objects_give_identical_rows() {
        let (model, store) = setup(ModelConfig::micro());
        let tape = Tape::new();
        let p = store.bind(&tape);
        let f = ObjectFeatures {
            raw: vec![[0.2; RAW_OBJECT_FEATURES]; 2],
            categories: vec![7, 7],
        };
        let o = model.encode_objects(&p, &f, &[false, false]).unwrap().value();
        assert_eq!(o.row(0), o.row(1));
        let bad = ObjectFeatures {
            raw: vec![[0.0; RAW_OBJECT_FEATURES]],
            categories: vec![500],
        };
        assert!(model.encode_objects(&p, &bad, &[false]).is_err());
    }

    #[test]
    fn end_to_end_gradients_match() {
        let (model, mut store) = setup(ModelConfig::micro());
        let f = feats(3);
        let mask = {
            let mut m = AttentionMask::all(1 + 4 + 3);
            m.set(2, 6, false);
            m
        };
        let report = grad_check(&mut store, |_, p| {
            let out = model.forward(p, &[4, 9, 5, 7], &f, &[false, true, false], Some(&mask))?;
            let r = model.relation_logits(p, &out.objects)?.log_softmax().mean();
            let m = model.match_logits(p, &out.words, &out.objects, MatchHead::S)?.sigmoid().sum();
            let g = model.grounding_logits(p, &out.cls, &out.objects)?.log_softmax().sum();
            r.add(&m)?.add(&g)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
