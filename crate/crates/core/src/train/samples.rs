//! Turning corpus records into model inputs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::Tensor;
use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::graph::{relation_matrix, RelationMatrix};
use crate::model::{object_features, ModelConfig, ObjectFeatures, Vocab, MASK};
use crate::objectives::{alignment_labels, rotate_scene};
use crate::text::{Description, Level, PhraseSpan};

use super::PretrainConfig;

/// Limits and rates used while building pre-training samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub max_text_len: usize,
    pub max_objects: usize,
    pub views: usize,
    pub categories: usize,
    pub mlm_rate: f64,
    pub mom_rate: f64,
    pub ssm_negative_rate: f64,
}

impl SampleConfig {
    pub fn new(model: &ModelConfig, pretrain: &PretrainConfig) -> Self {
        Self {
            max_text_len: model.max_text_len,
            max_objects: model.max_objects,
            views: model.views,
            categories: model.categories,
            mlm_rate: pretrain.mlm_rate,
            mom_rate: pretrain.mom_rate,
            ssm_negative_rate: pretrain.ssm_negative_rate,
        }
    }
}

/// Cuts a description to at most `max_len` tokens, preferring to stop right
/// after a full stop. Spans that would be cut are dropped.
pub fn truncate_description(desc: &Description, max_len: usize) -> (Vec<String>, Vec<PhraseSpan>) {
    if desc.text.len() <= max_len {
        return (desc.text.clone(), desc.spans.clone());
    }
    let cut = desc.text[..max_len]
        .iter()
        .rposition(|t| t == ".")
        .map_or(max_len, |i| i + 1);
    let spans = desc.spans.iter().filter(|s| s.token_end <= cut).cloned().collect();
    (desc.text[..cut].to_vec(), spans)
}

/// Mentioned ids first (in text order), then `rest`, without duplicates, capped.
fn object_order(spans: &[PhraseSpan], rest: impl Iterator<Item = u32>, cap: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = Vec::new();
    for id in spans.iter().map(|s| s.instance_id).chain(rest) {
        if ids.len() == cap {
            break;
        }
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    ids
}

/// One text/object pass with its word-object labels.
#[derive(Clone, Debug)]
pub struct LevelPass {
    pub tokens: Vec<usize>,
    pub ids: Vec<u32>,
    pub objects: ObjectFeatures,
    /// `[L, M]` alignment labels.
    pub y: Tensor,
}

fn level_pass(
    record: &CorpusRecord,
    desc: &Description,
    rest: impl Iterator<Item = u32>,
    vocab: &Vocab,
    cfg: &SampleConfig,
) -> Result<LevelPass> {
    let (text, spans) = truncate_description(desc, cfg.max_text_len);
    let ids = object_order(&spans, rest, cfg.max_objects);
    let objects = object_features(&record.scene, &ids, cfg.categories)?;
    Ok(LevelPass {
        tokens: vocab.encode(&text),
        y: alignment_labels(text.len(), &spans, &ids),
        ids,
        objects,
    })
}

/// Inputs for the masked-modeling and matching objectives.
#[derive(Clone, Debug)]
pub struct BasicPass {
    /// Text with masked positions replaced by `[MASK]`.
    pub tokens: Vec<usize>,
    pub mlm_positions: Vec<usize>,
    pub mlm_targets: Vec<usize>,
    pub objects: ObjectFeatures,
    pub masked_objects: Vec<bool>,
    /// Category targets of the masked objects, in object order.
    pub mom_targets: Vec<usize>,
    /// False when the text was borrowed from another scene.
    pub matched: bool,
}

/// Everything one pre-training sample needs: a masked pass, three alignment
/// levels, the room relation matrix and the rotated copies of the object-level objects.
#[derive(Clone, Debug)]
pub struct PretrainSample {
    pub basic: BasicPass,
    pub object_level: LevelPass,
    pub room_level: LevelPass,
    pub relations: RelationMatrix,
    pub scene_level: LevelPass,
    /// Object-level objects seen from views `2..=V`.
    pub rotated: Vec<ObjectFeatures>,
}

/// Picks at least one position when there is anything to pick.
fn choose_positions(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<usize> {
    if n == 0 || rate <= 0.0 {
        return Vec::new();
    }
    let mut picked: Vec<usize> = (0..n).filter(|_| rng.gen_bool(rate)).collect();
    if picked.is_empty() {
        picked.push(rng.gen_range(0..n));
    }
    picked
}

fn room_description(record: &CorpusRecord, room: u32) -> Result<&Description> {
    record
        .descriptions_at(Level::Room)
        .find(|d| d.anchor_id == Some(room))
        .ok_or_else(|| Error::Unknown {
            kind: "room description",
            name: room.to_string(),
        })
}

/// Builds a sample from `records[index]`. With probability
/// `ssm_negative_rate` the masked pass reads a room description taken from
/// a different record.
pub fn build_pretrain_sample(
    records: &[CorpusRecord],
    index: usize,
    vocab: &Vocab,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
) -> Result<PretrainSample> {
    let record = &records[index];
    let scene = &record.scene;
    let room = scene
        .rooms
        .choose(rng)
        .ok_or_else(|| Error::Invalid(format!("scene {} has no rooms", scene.id)))?
        .id;
    let room_ids = || scene.instances_in_room(room).map(|i| i.id);
    let room_desc = room_description(record, room)?;

    // Masked pass.
    let matched = !(records.len() > 1 && rng.gen_bool(cfg.ssm_negative_rate));
    let text_desc = if matched {
        room_desc
    } else {
        let mut other = rng.gen_range(0..records.len() - 1);
        if other >= index {
            other += 1;
        }
        let other_rec = &records[other];
        let r = other_rec
            .scene
            .rooms
            .choose(rng)
            .ok_or_else(|| Error::Invalid(format!("scene {} has no rooms", other_rec.scene.id)))?;
        room_description(other_rec, r.id)?
    };
    let (text, _) = truncate_description(text_desc, cfg.max_text_len);
    let mut tokens = vocab.encode(&text);
    let mlm_positions = choose_positions(tokens.len(), cfg.mlm_rate, rng);
    let mlm_targets = mlm_positions.iter().map(|&i| tokens[i]).collect();
    for &i in &mlm_positions {
        tokens[i] = MASK;
    }
    let basic_ids: Vec<u32> = room_ids().take(cfg.max_objects).collect();
    let objects = object_features(scene, &basic_ids, cfg.categories)?;
    let mut masked_objects = vec![false; basic_ids.len()];
    for i in choose_positions(basic_ids.len(), cfg.mom_rate, rng) {
        masked_objects[i] = true;
    }
    let mom_targets = masked_objects
        .iter()
        .zip(&objects.categories)
        .filter(|(m, _)| **m)
        .map(|(_, &c)| c)
        .collect();
    let basic = BasicPass {
        tokens,
        mlm_positions,
        mlm_targets,
        objects,
        masked_objects,
        mom_targets,
        matched,
    };

    // Object level, anchored on a random object of the room.
    let room_members: Vec<u32> = room_ids().collect();
    let anchor = *room_members
        .choose(rng)
        .ok_or_else(|| Error::Invalid(format!("room {room} of scene {} is empty", scene.id)))?;
    let anchor_desc = record
        .descriptions_at(Level::Object)
        .find(|d| d.anchor_id == Some(anchor))
        .ok_or_else(|| Error::Unknown {
            kind: "object description",
            name: anchor.to_string(),
        })?;
    let object_level = level_pass(record, anchor_desc, std::iter::empty(), vocab, cfg)?;
    // The anchor must be present even when its own sentence was cut.
    let object_level = if object_level.ids.contains(&anchor) || object_level.ids.len() == cfg.max_objects {
        object_level
    } else {
        level_pass(record, anchor_desc, std::iter::once(anchor), vocab, cfg)?
    };

    let room_level = level_pass(record, room_desc, room_ids(), vocab, cfg)?;
    let relations = relation_matrix(&record.scene_graph.restrict(&room_level.ids), &room_level.ids)?;

    let scene_desc = record
        .descriptions_at(Level::Scene)
        .next()
        .ok_or_else(|| Error::Unknown {
            kind: "scene description",
            name: scene.id.to_string(),
        })?;
    let scene_level = level_pass(record, scene_desc, scene.instances.iter().map(|i| i.id), vocab, cfg)?;

    let rotated = (2..=cfg.views)
        .map(|v| {
            let s = rotate_scene(scene, v, cfg.views)?;
            object_features(&s, &object_level.ids, cfg.categories)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PretrainSample {
        basic,
        object_level,
        room_level,
        relations,
        scene_level,
        rotated,
    })
}

/// A referring-expression sample: the anchor's description, the objects of
/// its scene, and the anchor's position among them.
#[derive(Clone, Debug)]
pub struct GroundingSample {
    pub tokens: Vec<usize>,
    pub objects: ObjectFeatures,
    pub target: usize,
}

/// One sample per object description of every record.
pub fn build_grounding_samples(
    records: &[CorpusRecord],
    vocab: &Vocab,
    max_text_len: usize,
    max_objects: usize,
    categories: usize,
) -> Result<Vec<GroundingSample>> {
    let mut out = Vec::new();
    for record in records {
        for desc in record.descriptions_at(Level::Object) {
            let Some(anchor) = desc.anchor_id else { continue };
            let (text, _) = truncate_description(desc, max_text_len);
            let mut ids: Vec<u32> = record.scene.instances.iter().map(|i| i.id).take(max_objects).collect();
            if !ids.contains(&anchor) {
                match ids.last_mut() {
                    Some(last) => *last = anchor,
                    None => continue,
                }
            }
            let target = ids.iter().position(|&i| i == anchor).expect("anchor inserted");
            out.push(GroundingSample {
                tokens: vocab.encode(&text),
                objects: object_features(&record.scene, &ids, categories)?,
                target,
            });
        }
    }
    Ok(out)
}
