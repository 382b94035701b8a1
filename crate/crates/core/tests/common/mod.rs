#![allow(dead_code)]

use scenevl::corpus::{CorpusRecord, RecordBuilder};
use scenevl::graph::{RelationLabel, RelationThresholds};
use scenevl::scene::{Catalog, GenerationConfig, Instance, Obb, Scene};

pub struct Setup {
    pub generation: GenerationConfig,
    pub catalog: Catalog,
    pub relations: RelationThresholds,
    pub max_relations: usize,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            catalog: Catalog::default(),
            relations: RelationThresholds::default(),
            max_relations: 6,
        }
    }
}

impl Setup {
    pub fn builder(&self) -> RecordBuilder<'_> {
        RecordBuilder {
            generation: &self.generation,
            catalog: &self.catalog,
            relations: &self.relations,
            max_relations: self.max_relations,
        }
    }

    pub fn record(&self, seed: u64) -> CorpusRecord {
        self.builder().build(seed).expect("scene builds")
    }
}

// Brute-force relation oracle. It shares no geometry code with the library:
// footprints, overlap areas and distances are recomputed here from the box
// parameters with different algorithms.

type P = [f64; 2];

fn corners(o: &Obb) -> Vec<P> {
    let (s, c) = o.yaw.sin_cos();
    let (hx, hy) = (o.size[0] / 2.0, o.size[1] / 2.0);
    [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
        .iter()
        .map(|&(lx, ly)| [o.center[0] + c * lx - s * ly, o.center[1] + s * lx + c * ly])
        .collect()
}

fn cross(o: P, a: P, b: P) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn inside(p: P, poly: &[P]) -> bool {
    (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], p) >= -1e-12)
}

fn segment_hit(p1: P, p2: P, q1: P, q2: P) -> Option<P> {
    let r = [p2[0] - p1[0], p2[1] - p1[1]];
    let s = [q2[0] - q1[0], q2[1] - q1[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den.abs() < 1e-15 {
        return None;
    }
    let qp = [q1[0] - p1[0], q1[1] - p1[1]];
    let t = (qp[0] * s[1] - qp[1] * s[0]) / den;
    let u = (qp[0] * r[1] - qp[1] * r[0]) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| [p1[0] + t * r[0], p1[1] + t * r[1]])
}

fn edges(poly: &[P]) -> impl Iterator<Item = (P, P)> + '_ {
    (0..poly.len()).map(move |i| (poly[i], poly[(i + 1) % poly.len()]))
}

/// Intersection polygon as the hull of contained vertices and edge crossings.
fn overlap(a: &[P], b: &[P]) -> f64 {
    let mut pts: Vec<P> = a.iter().copied().filter(|&p| inside(p, b)).collect();
    pts.extend(b.iter().copied().filter(|&p| inside(p, a)));
    for (p1, p2) in edges(a) {
        for (q1, q2) in edges(b) {
            pts.extend(segment_hit(p1, p2, q1, q2));
        }
    }
    if pts.len() < 3 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let c = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    pts.sort_by(|p, q| {
        let ap = (p[1] - c[1]).atan2(p[0] - c[0]);
        let aq = (q[1] - c[1]).atan2(q[0] - c[0]);
        ap.partial_cmp(&aq).unwrap()
    });
    let twice: f64 = (0..pts.len())
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    twice.abs() / 2.0
}

fn point_segment(p: P, a: P, b: P) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn plan_distance(a: &[P], b: &[P]) -> f64 {
    let touching = a.iter().any(|&p| inside(p, b))
        || b.iter().any(|&p| inside(p, a))
        || edges(a).any(|(p1, p2)| edges(b).any(|(q1, q2)| segment_hit(p1, p2, q1, q2).is_some()));
    if touching {
        return 0.0;
    }
    let one_way = |x: &[P], y: &[P]| {
        x.iter()
            .flat_map(|&p| edges(y).map(move |(a, b)| point_segment(p, a, b)))
            .fold(f64::INFINITY, f64::min)
    };
    one_way(a, b).min(one_way(b, a))
}

fn bottom(i: &Instance) -> f64 {
    i.obb.center[2] - i.obb.size[2] / 2.0
}

fn top(i: &Instance) -> f64 {
    i.obb.center[2] + i.obb.size[2] / 2.0
}

pub fn gap(a: &Instance, b: &Instance) -> f64 {
    let h = plan_distance(&corners(&a.obb), &corners(&b.obb));
    let v = (bottom(a).max(bottom(b)) - top(a).min(top(b))).max(0.0);
    h.hypot(v)
}

fn area(i: &Instance) -> f64 {
    i.obb.size[0] * i.obb.size[1]
}

fn supports(a: &Instance, b: &Instance, t: &RelationThresholds) -> bool {
    (bottom(a) - top(b)).abs() <= t.contact_tolerance
        && overlap(&corners(&a.obb), &corners(&b.obb)) >= t.support_overlap * area(a)
}

/// Every label for the ordered pair, following the written predicate rules.
pub fn oracle_labels(a: &Instance, b: &Instance, t: &RelationThresholds) -> Vec<RelationLabel> {
    use RelationLabel::*;
    let mut out = Vec::new();
    if supports(a, b, t) {
        let r = a.obb.size[2] / a.obb.size[0].max(a.obb.size[1]);
        out.push(if r >= t.standing_ratio {
            StandingOn
        } else if r <= t.lying_ratio {
            LyingOn
        } else {
            OnTopOf
        });
    }

    if a.room_id == b.room_id && !supports(a, b, t) && !supports(b, a, t) {
        let ov = overlap(&corners(&a.obb), &corners(&b.obb));
        let stacked = ov >= t.above_overlap * area(a).min(area(b));
        let g = gap(a, b);
        let (dx, dy) = (a.obb.center[0] - b.obb.center[0], a.obb.center[1] - b.obb.center[1]);
        let label = if stacked && bottom(a) - top(b) > t.contact_tolerance {
            Some(Above)
        } else if stacked && bottom(b) - top(a) > t.contact_tolerance {
            Some(Below)
        } else if g <= t.near {
            Some(NextTo)
        } else if g > t.near * t.neighbor_factor || (dx == 0.0 && dy == 0.0) {
            Option::None
        } else if dx.abs() >= dy.abs() {
            Some(if dx < 0.0 { LeftOf } else { RightOf })
        } else {
            Some(if dy < 0.0 { InFrontOf } else { Behind })
        };
        out.extend(label);
    }

    let (sa, sb) = (a.obb.size, b.obb.size);
    let norm = |s: [f64; 3]| (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    let cosine = (sa[0] * sb[0] + sa[1] * sb[1] + sa[2] * sb[2]) / (norm(sa) * norm(sb));
    let (va, vb) = (sa[0] * sa[1] * sa[2], sb[0] * sb[1] * sb[2]);
    let cmp = if a.category == b.category && cosine >= t.same_shape_cosine {
        Some(SameShapeAs)
    } else if va >= t.bigger_ratio * vb {
        Some(BiggerThan)
    } else if vb >= t.bigger_ratio * va {
        Some(SmallerThan)
    } else if sa[2] >= t.taller_ratio * sb[2] {
        Some(TallerThan)
    } else if sb[2] >= t.taller_ratio * sa[2] {
        Some(ShorterThan)
    } else {
        Option::None
    };
    out.extend(cmp);
    out
}

/// Sorted (subject, label, object) triples over all ordered pairs within the neighbor radius.
pub fn oracle_graph(scene: &Scene, t: &RelationThresholds) -> Vec<(u32, RelationLabel, u32)> {
    let mut out = Vec::new();
    for a in &scene.instances {
        for b in &scene.instances {
            if a.id == b.id || gap(a, b) > t.near * t.neighbor_factor {
                continue;
            }
            out.extend(oracle_labels(a, b, t).into_iter().map(|l| (a.id, l, b.id)));
        }
    }
    out.sort();
    out
}

/// Edge-set difference count between a library graph and the oracle.
pub fn graph_differences(scene: &Scene, t: &RelationThresholds) -> usize {
    let got: std::collections::BTreeSet<_> = scenevl::graph::extract_scene_graph(scene, t)
        .edges
        .iter()
        .map(|e| (e.subject, e.label, e.object))
        .collect();
    let want: std::collections::BTreeSet<_> = oracle_graph(scene, t).into_iter().collect();
    got.symmetric_difference(&want).count()
}

/// The clockwise rotation matrix about +Z applied to a point.
pub fn clockwise(p: [f64; 3], theta: f64) -> [f64; 3] {
    let (c, s) = (theta.cos(), theta.sin());
    [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]]
}

pub fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t = std::time::Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}
