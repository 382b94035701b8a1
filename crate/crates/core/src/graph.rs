//! Relation graphs extracted from scene geometry.
//!
//! Labels come in three families. Support labels hold when the subject's
//! bottom face rests on the object's top face. Spatial labels describe
//! placement between neighbors in one room; the directional ones (front,
//! behind, left, right) are read in a fixed viewer frame looking along +Y,
//! so rotating a scene by pi swaps each with its inverse. Comparative labels
//! compare volume, height and shape. Each ordered pair carries at most one
//! label per family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_intersection_area, polygon_distance};
use crate::scene::{Instance, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationLabel {
    None,
    OnTopOf,
    StandingOn,
    LyingOn,
    NextTo,
    InFrontOf,
    Behind,
    LeftOf,
    RightOf,
    Above,
    Below,
    BiggerThan,
    SmallerThan,
    TallerThan,
    ShorterThan,
    SameShapeAs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationFamily {
    Support,
    Spatial,
    Comparative,
}

impl RelationLabel {
    pub const ALL: [RelationLabel; 16] = [
        RelationLabel::None,
        RelationLabel::OnTopOf,
        RelationLabel::StandingOn,
        RelationLabel::LyingOn,
        RelationLabel::NextTo,
        RelationLabel::InFrontOf,
        RelationLabel::Behind,
        RelationLabel::LeftOf,
        RelationLabel::RightOf,
        RelationLabel::Above,
        RelationLabel::Below,
        RelationLabel::BiggerThan,
        RelationLabel::SmallerThan,
        RelationLabel::TallerThan,
        RelationLabel::ShorterThan,
        RelationLabel::SameShapeAs,
    ];

    /// Number of classes, including `None`.
    pub const COUNT: usize = 16;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn family(self) -> Option<RelationFamily> {
        use RelationLabel::*;
        match self {
            None => Option::None,
            OnTopOf | StandingOn | LyingOn => Some(RelationFamily::Support),
            NextTo | InFrontOf | Behind | LeftOf | RightOf | Above | Below => Some(RelationFamily::Spatial),
            BiggerThan | SmallerThan | TallerThan | ShorterThan | SameShapeAs => Some(RelationFamily::Comparative),
        }
    }

    /// Label that holds for the reversed pair, when it is determined.
    pub fn inverse(self) -> Option<Self> {
        use RelationLabel::*;
        match self {
            NextTo => Some(NextTo),
            SameShapeAs => Some(SameShapeAs),
            InFrontOf => Some(Behind),
            Behind => Some(InFrontOf),
            LeftOf => Some(RightOf),
            RightOf => Some(LeftOf),
            Above => Some(Below),
            Below => Some(Above),
            BiggerThan => Some(SmallerThan),
            SmallerThan => Some(BiggerThan),
            TallerThan => Some(ShorterThan),
            ShorterThan => Some(TallerThan),
            _ => Option::None,
        }
    }

    /// Whether the label depends on the viewing direction.
    pub fn is_view_dependent(self) -> bool {
        matches!(
            self,
            RelationLabel::InFrontOf | RelationLabel::Behind | RelationLabel::LeftOf | RelationLabel::RightOf
        )
    }

    /// Words placed between "is" and the object phrase in a relation sentence.
    pub fn phrase(self) -> &'static [&'static str] {
        use RelationLabel::*;
        match self {
            None => &["unrelated", "to"],
            OnTopOf => &["on", "top", "of"],
            StandingOn => &["standing", "on"],
            LyingOn => &["lying", "on"],
            NextTo => &["next", "to"],
            InFrontOf => &["in", "front", "of"],
            Behind => &["behind"],
            LeftOf => &["to", "the", "left", "of"],
            RightOf => &["to", "the", "right", "of"],
            Above => &["above"],
            Below => &["below"],
            BiggerThan => &["bigger", "than"],
            SmallerThan => &["smaller", "than"],
            TallerThan => &["taller", "than"],
            ShorterThan => &["shorter", "than"],
            SameShapeAs => &["the", "same", "shape", "as"],
        }
    }

    /// Lower is more important when several families hold for one pair.
    pub fn priority(self) -> usize {
        match self.family() {
            Some(RelationFamily::Support) => 0,
            Some(RelationFamily::Spatial) => 1,
            Some(RelationFamily::Comparative) => 2,
            Option::None => 3,
        }
    }
}

/// Predicate thresholds; the `[relations]` table of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationThresholds {
    /// Max distance between a bottom face and a top face counted as contact.
    pub contact_tolerance: f64,
    /// Fraction of the subject footprint that must overlap its supporter.
    pub support_overlap: f64,
    /// Height / width at or above which a supported object is "standing".
    pub standing_ratio: f64,
    /// Height / width at or below which a supported object is "lying".
    pub lying_ratio: f64,
    /// Nearest-surface gap for "next to".
    pub near: f64,
    /// Neighbor radius as a multiple of `near`; farther pairs get no edges.
    pub neighbor_factor: f64,
    /// Fraction of the smaller footprint that must overlap for above/below.
    pub above_overlap: f64,
    pub bigger_ratio: f64,
    pub taller_ratio: f64,
    pub same_shape_cosine: f64,
}

impl Default for RelationThresholds {
    fn default() -> Self {
        Self {
            contact_tolerance: 0.02,
            support_overlap: 0.5,
            standing_ratio: 1.2,
            lying_ratio: 0.8,
            near: 1.0,
            neighbor_factor: 2.0,
            above_overlap: 0.5,
            bigger_ratio: 1.5,
            taller_ratio: 1.25,
            same_shape_cosine: 0.95,
        }
    }
}

impl RelationThresholds {
    pub fn neighbor_radius(&self) -> f64 {
        self.near * self.neighbor_factor
    }
}

fn footprint_overlap(a: &Instance, b: &Instance) -> f64 {
    convex_intersection_area(&a.obb.footprint(), &b.obb.footprint())
}

/// Nearest-surface distance between two z-aligned prisms.
pub fn surface_gap(a: &Instance, b: &Instance) -> f64 {
    let horizontal = polygon_distance(&a.obb.footprint(), &b.obb.footprint());
    let vertical = (a.obb.bottom().max(b.obb.bottom()) - a.obb.top().min(b.obb.top())).max(0.0);
    (horizontal * horizontal + vertical * vertical).sqrt()
}

fn rests_on(a: &Instance, b: &Instance, t: &RelationThresholds) -> bool {
    (a.obb.bottom() - b.obb.top()).abs() <= t.contact_tolerance
        && footprint_overlap(a, b) >= t.support_overlap * a.obb.footprint_area()
}

fn support_label(a: &Instance, b: &Instance, t: &RelationThresholds) -> Option<RelationLabel> {
    if !rests_on(a, b, t) {
        return None;
    }
    let ratio = a.obb.size[2] / a.obb.size[0].max(a.obb.size[1]);
    Some(if ratio >= t.standing_ratio {
        RelationLabel::StandingOn
    } else if ratio <= t.lying_ratio {
        RelationLabel::LyingOn
    } else {
        RelationLabel::OnTopOf
    })
}

fn spatial_label(a: &Instance, b: &Instance, t: &RelationThresholds) -> Option<RelationLabel> {
    if a.room_id != b.room_id || rests_on(a, b, t) || rests_on(b, a, t) {
        return None;
    }
    let min_area = a.obb.footprint_area().min(b.obb.footprint_area());
    let stacked = footprint_overlap(a, b) >= t.above_overlap * min_area;
    if stacked && a.obb.bottom() - b.obb.top() > t.contact_tolerance {
        return Some(RelationLabel::Above);
    }
    if stacked && b.obb.bottom() - a.obb.top() > t.contact_tolerance {
        return Some(RelationLabel::Below);
    }
    let gap = surface_gap(a, b);
    if gap <= t.near {
        return Some(RelationLabel::NextTo);
    }
    if gap > t.neighbor_radius() {
        return None;
    }
    let dx = a.obb.center[0] - b.obb.center[0];
    let dy = a.obb.center[1] - b.obb.center[1];
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            RelationLabel::LeftOf
        } else {
            RelationLabel::RightOf
        }
    } else if dy < 0.0 {
        RelationLabel::InFrontOf
    } else {
        RelationLabel::Behind
    })
}

fn comparative_label(a: &Instance, b: &Instance, t: &RelationThresholds) -> Option<RelationLabel> {
    let sa = a.obb.size;
    let sb = b.obb.size;
    if a.category == b.category {
        let dot: f64 = (0..3).map(|k| sa[k] * sb[k]).sum();
        let na = sa.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = sb.iter().map(|v| v * v).sum::<f64>().sqrt();
        if dot / (na * nb) >= t.same_shape_cosine {
            return Some(RelationLabel::SameShapeAs);
        }
    }
    let (va, vb) = (a.obb.volume(), b.obb.volume());
    if va >= t.bigger_ratio * vb {
        return Some(RelationLabel::BiggerThan);
    }
    if vb >= t.bigger_ratio * va {
        return Some(RelationLabel::SmallerThan);
    }
    if sa[2] >= t.taller_ratio * sb[2] {
        return Some(RelationLabel::TallerThan);
    }
    if sb[2] >= t.taller_ratio * sa[2] {
        return Some(RelationLabel::ShorterThan);
    }
    None
}

/// Labels that hold for the ordered pair `(a, b)`, at most one per family,
/// in family priority order.
pub fn classify_pair(a: &Instance, b: &Instance, thresholds: &RelationThresholds) -> Vec<RelationLabel> {
    if a.id == b.id {
        return Vec::new();
    }
    [
        support_label(a, b, thresholds),
        spatial_label(a, b, thresholds),
        comparative_label(a, b, thresholds),
    ]
    .into_iter()
    .flatten()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub subject: u32,
    pub label: RelationLabel,
    pub object: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<u32>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.subject == e.object {
                return Err(Error::Invalid(format!("self edge on {}", e.subject)));
            }
            if !self.nodes.contains(&e.subject) || !self.nodes.contains(&e.object) {
                return Err(Error::Invalid(format!("edge {e:?} references a missing node")));
            }
            if e.label == RelationLabel::None {
                return Err(Error::Invalid("`none` is not an edge label".into()));
            }
            if !seen.insert((e.subject, e.object, e.label.family())) {
                return Err(Error::Invalid(format!("two edges of one family on {e:?}")));
            }
        }
        Ok(())
    }

    /// Outgoing edges of `id`, keeping the highest-priority label per object.
    pub fn strongest_outgoing(&self, id: u32) -> Vec<Edge> {
        let mut out: Vec<Edge> = Vec::new();
        for e in self.edges.iter().filter(|e| e.subject == id) {
            match out.iter_mut().find(|o| o.object == e.object) {
                Some(o) if e.label.priority() < o.label.priority() => *o = *e,
                Some(_) => {}
                None => out.push(*e),
            }
        }
        out.sort_by_key(|e| (e.label.priority(), e.object));
        out
    }

    /// Subgraph over `ids`, dropping edges that leave it.
    pub fn restrict(&self, ids: &[u32]) -> SceneGraph {
        SceneGraph {
            nodes: self.nodes.iter().copied().filter(|n| ids.contains(n)).collect(),
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|e| ids.contains(&e.subject) && ids.contains(&e.object))
                .collect(),
        }
    }
}

/// Builds the relation graph of a scene: every ordered pair within the
/// neighbor radius gets the labels returned by [`classify_pair`].
pub fn extract_scene_graph(scene: &Scene, thresholds: &RelationThresholds) -> SceneGraph {
    let radius = thresholds.neighbor_radius();
    let n = scene.instances.len();
    let boxes: Vec<[f64; 4]> = scene
        .instances
        .iter()
        .map(|i| {
            let [hx, hy] = i.obb.footprint_half_extents();
            [i.obb.center[0] - hx, i.obb.center[1] - hy, i.obb.center[0] + hx, i.obb.center[1] + hy]
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            // Axis-aligned bounds give a lower bound on the gap.
            let (p, q) = (boxes[i], boxes[j]);
            let dx = (q[0] - p[2]).max(p[0] - q[2]).max(0.0);
            let dy = (q[1] - p[3]).max(p[1] - q[3]).max(0.0);
            if (dx * dx + dy * dy).sqrt() > radius {
                continue;
            }
            let (a, b) = (&scene.instances[i], &scene.instances[j]);
            if surface_gap(a, b) > radius {
                continue;
            }
            for (s, o) in [(a, b), (b, a)] {
                for label in classify_pair(s, o, thresholds) {
                    edges.push(Edge {
                        subject: s.id,
                        label,
                        object: o.id,
                    });
                }
            }
        }
    }
    edges.sort();
    SceneGraph {
        nodes: scene.instances.iter().map(|i| i.id).collect(),
        edges,
    }
}

/// Square matrix of relation label indices in a fixed object order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    size: usize,
    labels: Vec<usize>,
}

impl RelationMatrix {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            labels: vec![0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.labels[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, label: usize) {
        self.labels[i * self.size + j] = label;
    }

    /// Row-major label indices.
    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }
}

/// Entry `(i, j)` is the highest-priority label on an edge `order[i] -> order[j]`, else 0.
pub fn relation_matrix(graph: &SceneGraph, order: &[u32]) -> Result<RelationMatrix> {
    for n in &graph.nodes {
        if !order.contains(n) {
            return Err(Error::Unknown {
                kind: "instance in relation order",
                name: n.to_string(),
            });
        }
    }
    let pos = |id: u32| order.iter().position(|&o| o == id);
    let mut m = RelationMatrix::zeros(order.len());
    for e in &graph.edges {
        let (Some(i), Some(j)) = (pos(e.subject), pos(e.object)) else {
            return Err(Error::Unknown {
                kind: "edge endpoint in relation order",
                name: format!("{}->{}", e.subject, e.object),
            });
        };
        if i == j {
            continue;
        }
        let current = m.get(i, j);
        let replace = current == 0
            || e.label.priority() < RelationLabel::from_index(current).map(|l| l.priority()).unwrap_or(usize::MAX);
        if replace {
            m.set(i, j, e.label.index());
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Color, Material, Obb};

    pub(crate) fn inst(id: u32, category: usize, center: [f64; 3], size: [f64; 3], yaw: f64) -> Instance {
        Instance {
            id,
            category,
            color: Color::Red,
            material: Material::Wooden,
            obb: Obb::new(center, size, yaw).unwrap(),
            points: Vec::new(),
            room_id: 0,
            supported_by: None,
        }
    }

    #[test]
    fn vocabulary_is_ordered_with_none_first() {
        assert_eq!(RelationLabel::None.index(), 0);
        for (i, l) in RelationLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(RelationLabel::from_index(i), Some(*l));
        }
    }

    #[test]
    fn contact_with_overlap_is_on_top_of() {
        let t = RelationThresholds::default();
        // Cube resting on a wide box: bottom at 0.8 meets top at 0.8.
        let a = inst(0, 0, [0.0, 0.0, 1.05], [0.5, 0.5, 0.5], 0.0);
        let b = inst(1, 1, [0.0, 0.0, 0.4], [2.0, 1.0, 0.8], 0.0);
        assert_eq!(classify_pair(&a, &b, &t)[0], RelationLabel::OnTopOf);
        // Tall and flat variants.
        let tall = inst(2, 0, [0.0, 0.0, 1.1], [0.2, 0.2, 0.6], 0.0);
        assert_eq!(classify_pair(&tall, &b, &t)[0], RelationLabel::StandingOn);
        let flat = inst(3, 0, [0.0, 0.0, 0.82], [0.3, 0.2, 0.04], 0.0);
        assert_eq!(classify_pair(&flat, &b, &t)[0], RelationLabel::LyingOn);
    }

    #[test]
    fn volume_ratio_two_is_bigger_and_smaller() {
        let t = RelationThresholds::default();
        let a = inst(0, 0, [0.0, 0.0, 0.5], [2.0, 1.0, 1.0], 0.0);
        let b = inst(1, 1, [30.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(classify_pair(&a, &b, &t), vec![RelationLabel::BiggerThan]);
        assert_eq!(classify_pair(&b, &a, &t), vec![RelationLabel::SmallerThan]);
    }

    #[test]
    fn distant_twins_are_only_same_shape() {
        let t = RelationThresholds::default();
        let a = inst(0, 4, [0.0, 0.0, 0.5], [1.0, 0.6, 1.0], 0.0);
        let b = inst(1, 4, [10.0 + 1.0, 0.0, 0.5], [1.0, 0.6, 1.0], 0.0);
        assert!(surface_gap(&a, &b) > t.near);
        assert_eq!(classify_pair(&a, &b, &t), vec![RelationLabel::SameShapeAs]);
        assert_eq!(classify_pair(&b, &a, &t), vec![RelationLabel::SameShapeAs]);
    }

    #[test]
    fn directional_labels_are_antisymmetric() {
        let t = RelationThresholds::default();
        let a = inst(0, 0, [0.0, 0.0, 0.5], [0.5, 0.5, 1.0], 0.3);
        let b = inst(1, 0, [1.9, 0.4, 0.5], [0.5, 0.5, 1.0], 1.1);
        let ab = classify_pair(&a, &b, &t);
        let ba = classify_pair(&b, &a, &t);
        assert!(ab.contains(&RelationLabel::LeftOf));
        assert!(ba.contains(&RelationLabel::RightOf));
    }

    #[test]
    fn above_without_contact() {
        let t = RelationThresholds::default();
        let shelf = inst(0, 0, [0.0, 0.0, 2.0], [0.6, 0.6, 0.1], 0.0);
        let box_ = inst(1, 1, [0.0, 0.0, 0.3], [0.5, 0.5, 0.6], 0.0);
        assert!(classify_pair(&shelf, &box_, &t).contains(&RelationLabel::Above));
        assert!(classify_pair(&box_, &shelf, &t).contains(&RelationLabel::Below));
    }

    #[test]
    fn empty_graph_and_matrix() {
        let scene = Scene {
            id: 0,
            seed: 0,
            rooms: Vec::new(),
            instances: Vec::new(),
        };
        let g = extract_scene_graph(&scene, &RelationThresholds::default());
        assert!(g.edges.is_empty());
        let m = relation_matrix(&g, &[5, 6, 7]).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0));
        assert_eq!(m.size(), 3);
    }

    #[test]
    fn relation_matrix_rejects_missing_ids() {
        let g = SceneGraph {
            nodes: vec![1, 2],
            edges: vec![Edge {
                subject: 1,
                label: RelationLabel::NextTo,
                object: 2,
            }],
        };
        assert!(relation_matrix(&g, &[1]).is_err());
        let m = relation_matrix(&g, &[2, 1]).unwrap();
        assert_eq!(m.get(1, 0), RelationLabel::NextTo.index());
        assert_eq!(m.get(0, 0), 0);
    }
}
