//! Template descriptions at object, room and scene level.
//!
//! Every mention of an object is written as a single identifier token such
//! as `chair(3)`, and each mention is covered by a [`PhraseSpan`] that binds
//! it to the instance. Tokens are whitespace separated.

mod rewrite;

use serde::{Deserialize, Serialize};

pub use rewrite::{
    apply_rewriter, validate_rewrite, ExternalRewriter, IdentityRewriter, RewriteReport, Rewriter, SynonymSwap,
};

use crate::error::{Error, Result};
use crate::graph::{Edge, SceneGraph};
use crate::scene::{Catalog, Instance, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub token_start: usize,
    pub token_end: usize,
    pub instance_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Object,
    Room,
    Scene,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Object, Level::Room, Level::Scene];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<u32>,
    #[serde(with = "joined")]
    pub text: Vec<String>,
    pub spans: Vec<PhraseSpan>,
}

/// Stores a token list as one space-joined string.
mod joined {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tokens: &[String], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&tokens.join(" "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.split_whitespace().map(str::to_owned).collect())
    }
}

/// Splits an identifier token `category(id)` into its parts.
pub fn parse_identifier(token: &str) -> Option<(&str, u32)> {
    let body = token.strip_suffix(')')?;
    let open = body.rfind('(')?;
    let (category, id) = (&body[..open], &body[open + 1..]);
    if category.is_empty() || category.contains(['(', ')']) || id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    Some((category, id.parse().ok()?))
}

/// A token that tries to be an identifier but is not well formed.
pub fn is_malformed_identifier(token: &str) -> bool {
    token.contains(['(', ')']) && parse_identifier(token).is_none()
}

pub fn identifier(category: &str, id: u32) -> String {
    format!("{category}({id})")
}

/// Token sequence with spans relative to its own start.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Phrase {
    pub tokens: Vec<String>,
    pub spans: Vec<PhraseSpan>,
}

impl Phrase {
    fn push(&mut self, word: &str) {
        self.tokens.push(word.to_owned());
    }

    fn push_identifier(&mut self, category: &str, id: u32) {
        self.spans.push(PhraseSpan {
            token_start: self.tokens.len(),
            token_end: self.tokens.len() + 1,
            instance_id: id,
        });
        self.tokens.push(identifier(category, id));
    }

    fn append(&mut self, other: Phrase) {
        let offset = self.tokens.len();
        self.spans.extend(other.spans.into_iter().map(|s| PhraseSpan {
            token_start: s.token_start + offset,
            token_end: s.token_end + offset,
            instance_id: s.instance_id,
        }));
        self.tokens.extend(other.tokens);
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// `the {category}({id}) is {relation} the {category}({id})`.
pub fn render_relation(scene: &Scene, catalog: &Catalog, edge: &Edge) -> Result<Phrase> {
    let find = |id: u32| {
        scene.instance(id).ok_or_else(|| Error::Unknown {
            kind: "instance",
            name: id.to_string(),
        })
    };
    let (s, o) = (find(edge.subject)?, find(edge.object)?);
    let mut p = Phrase::default();
    p.push("the");
    p.push_identifier(catalog.name(s.category), s.id);
    p.push("is");
    for w in edge.label.phrase() {
        p.push(w);
    }
    p.push("the");
    p.push_identifier(catalog.name(o.category), o.id);
    Ok(p)
}

/// `a {color} {material} {category}({id})`; the span covers the noun phrase.
pub fn render_appearance(instance: &Instance, catalog: &Catalog) -> Phrase {
    let tokens = vec![
        "a".to_owned(),
        instance.color.word().to_owned(),
        instance.material.word().to_owned(),
        identifier(catalog.name(instance.category), instance.id),
    ];
    Phrase {
        spans: vec![PhraseSpan {
            token_start: 1,
            token_end: 4,
            instance_id: instance.id,
        }],
        tokens,
    }
}

/// Composes descriptions of one scene.
#[derive(Clone, Copy, Debug)]
pub struct TextGenerator<'a> {
    pub catalog: &'a Catalog,
    /// Relation sentences merged into an object paragraph.
    pub max_relations: usize,
}

impl<'a> TextGenerator<'a> {
    pub fn new(catalog: &'a Catalog, max_relations: usize) -> Self {
        Self { catalog, max_relations }
    }

    /// Appearance sentence followed by one sentence per neighbor, using the
    /// highest-priority outgoing label for each.
    fn object_paragraph(&self, scene: &Scene, graph: &SceneGraph, inst: &Instance) -> Result<Phrase> {
        let mut p = render_appearance(inst, self.catalog);
        p.push(".");
        for e in graph.strongest_outgoing(inst.id).iter().take(self.max_relations) {
            p.append(render_relation(scene, self.catalog, e)?);
            p.push(".");
        }
        Ok(p)
    }

    fn room_paragraph(&self, scene: &Scene, graph: &SceneGraph, room_id: u32) -> Result<Phrase> {
        let mut p = Phrase::default();
        for inst in scene.instances_in_room(room_id) {
            p.append(self.object_paragraph(scene, graph, inst)?);
        }
        Ok(p)
    }

    pub fn compose(&self, scene: &Scene, graph: &SceneGraph, level: Level, anchor: Option<u32>) -> Result<Description> {
        let missing = |kind: &'static str| Error::Unknown {
            kind,
            name: anchor.map_or_else(|| "<none>".to_owned(), |a| a.to_string()),
        };
        let phrase = match level {
            Level::Object => {
                let inst = anchor.and_then(|a| scene.instance(a)).ok_or_else(|| missing("instance"))?;
                self.object_paragraph(scene, graph, inst)?
            }
            Level::Room => {
                let room = anchor.and_then(|a| scene.room(a)).ok_or_else(|| missing("room"))?;
                self.room_paragraph(scene, graph, room.id)?
            }
            Level::Scene => {
                let mut p = Phrase::default();
                for (k, room) in scene.rooms.iter().enumerate() {
                    p.push("room");
                    p.push(&(k + 1).to_string());
                    p.push(":");
                    p.append(self.room_paragraph(scene, graph, room.id)?);
                }
                p
            }
        };
        Ok(Description {
            level,
            anchor_id: if level == Level::Scene { None } else { anchor },
            text: phrase.tokens,
            spans: phrase.spans,
        })
    }

    /// Every description of a scene: one per instance, one per room, one for the scene.
    pub fn describe_all(&self, scene: &Scene, graph: &SceneGraph) -> Result<Vec<Description>> {
        let mut out = Vec::with_capacity(scene.instances.len() + scene.rooms.len() + 1);
        for inst in &scene.instances {
            out.push(self.compose(scene, graph, Level::Object, Some(inst.id))?);
        }
        for room in &scene.rooms {
            out.push(self.compose(scene, graph, Level::Room, Some(room.id))?);
        }
        out.push(self.compose(scene, graph, Level::Scene, None)?);
        Ok(out)
    }
}

pub fn compose_description(
    scene: &Scene,
    graph: &SceneGraph,
    catalog: &Catalog,
    level: Level,
    anchor: Option<u32>,
    max_relations: usize,
) -> Result<Description> {
    TextGenerator::new(catalog, max_relations).compose(scene, graph, level, anchor)
}

impl Description {
    /// Ids of all identifier tokens, in text order.
    pub fn mentioned_ids(&self) -> Vec<u32> {
        self.text.iter().filter_map(|t| parse_identifier(t)).map(|(_, id)| id).collect()
    }

    /// Checks span bounds, ordering and the identifier-coverage rule.
    /// With a scene, span ids and the anchor must also exist in it.
    pub fn validate(&self, scene: Option<&Scene>) -> Result<()> {
        let bad = |m: String| Error::Invalid(format!("{:?} description: {m}", self.level));
        let mut covered = vec![false; self.text.len()];
        let mut last_end = 0;
        for s in &self.spans {
            if !(s.token_start < s.token_end && s.token_end <= self.text.len()) {
                return Err(bad(format!("span {s:?} out of bounds")));
            }
            if s.token_start < last_end {
                return Err(bad(format!("span {s:?} overlaps its predecessor")));
            }
            last_end = s.token_end;
            let ids: Vec<(usize, u32)> = (s.token_start..s.token_end)
                .filter_map(|i| parse_identifier(&self.text[i]).map(|(_, id)| (i, id)))
                .collect();
            match ids.as_slice() {
                [(i, id)] if *id == s.instance_id => covered[*i] = true,
                _ => return Err(bad(format!("span {s:?} must contain exactly its own identifier"))),
            }
            if let Some(scene) = scene {
                if scene.instance(s.instance_id).is_none() {
                    return Err(bad(format!("span refers to missing instance {}", s.instance_id)));
                }
            }
        }
        for (i, t) in self.text.iter().enumerate() {
            if t.chars().any(char::is_whitespace) || t.is_empty() {
                return Err(bad(format!("token {i} is not a single word")));
            }
            if is_malformed_identifier(t) {
                return Err(bad(format!("malformed identifier `{t}`")));
            }
            if parse_identifier(t).is_some() && !covered[i] {
                return Err(bad(format!("identifier `{t}` not covered by a span")));
            }
        }
        match (self.level, self.anchor_id, scene) {
            (Level::Scene, Some(_), _) => Err(bad("scene descriptions have no anchor".into())),
            (Level::Object | Level::Room, None, _) => Err(bad("missing anchor".into())),
            (Level::Object, Some(a), Some(sc)) if sc.instance(a).is_none() => Err(bad(format!("anchor {a} not found"))),
            (Level::Room, Some(a), Some(sc)) if sc.room(a).is_none() => Err(bad(format!("room {a} not found"))),
            _ => Ok(()),
        }
    }
}
