//! Pre-training losses: relation prediction, multi-level and view-aggregated
//! region-word alignment, masked language / object modeling and scene-text
//! matching, plus their weighted combination.

use std::f64::consts::TAU;

use crate::autodiff::{bce_with_logits, cross_entropy_index, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::graph::RelationMatrix;
use crate::scene::{wrap_angle, Scene};
use crate::text::PhraseSpan;

/// Word-object match labels: entry `(i, j)` is 1 when token `i` lies in a
/// span bound to `objects[j]`. Tokens at or beyond `len` are ignored.
pub fn alignment_labels(len: usize, spans: &[PhraseSpan], objects: &[u32]) -> Tensor {
    let m = objects.len();
    let mut y = Tensor::zeros(&[len, m]);
    for s in spans {
        if let Some(j) = objects.iter().position(|&o| o == s.instance_id) {
            for i in s.token_start..s.token_end.min(len) {
                y.set(i, j, 1.0);
            }
        }
    }
    y
}

/// Relation prediction loss: `-(1/M^2) sum_ij log r(O_i, O_j)[R_ij]`, from
/// `[M * M, K]` logits in row-major pair order. Zero when `M = 0`.
pub fn orp_loss<'t>(logits: &Var<'t>, relations: &RelationMatrix) -> Result<Var<'t>> {
    let m = relations.size();
    let (rows, _) = logits.dims2();
    if rows != m * m {
        return Err(Error::shape("orp_loss", &logits.shape(), &[m * m]));
    }
    cross_entropy_index(logits, relations.as_slice())
}

/// Region-word matching loss from `[L, M]` logits:
/// `-(1/(L M)) sum_ij y_ij log p_ij`, plus `(1 - y_ij) log(1 - p_ij)` when
/// `negatives` is set. Zero when `L` or `M` is 0.
pub fn match_loss<'t>(logits: &Var<'t>, y: &Tensor, negatives: bool) -> Result<Var<'t>> {
    let (l, m) = logits.dims2();
    if y.dims2() != (l, m) {
        return Err(Error::shape("match_loss", &logits.shape(), y.shape()));
    }
    if l == 0 || m == 0 {
        log::warn!("match loss on an empty {l}x{m} grid contributes 0");
        return Ok(logits.tape().scalar(0.0));
    }
    if negatives {
        return bce_with_logits(logits, y);
    }
    let tape = logits.tape();
    let yv = tape.constant(y.clone());
    Ok(logits.log_sigmoid().mul(&yv)?.sum().scale(-1.0 / (l * m) as f64))
}

/// Sum of the per-level alignment losses (object, room, scene).
pub fn mrwa_loss<'t>(levels: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = levels
        .split_first()
        .ok_or_else(|| Error::Invalid("mrwa_loss needs at least one level".into()))?;
    rest.iter().try_fold(*first, |acc, l| acc.add(l))
}

/// Rotation of view `v` out of `V` (1-based): `2 pi (v - 1) / V`.
pub fn view_angle(v: usize, views: usize) -> Result<f64> {
    if views == 0 || v == 0 || v > views {
        return Err(Error::Invalid(format!("view {v} of {views}")));
    }
    Ok(TAU / views as f64 * (v - 1) as f64)
}

/// Clockwise rotation about +Z by `theta`.
pub fn rotate_point(p: Vec3, theta: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    [p[0] * c + p[1] * s, -p[0] * s + p[1] * c, p[2]]
}

/// The scene seen from view `v`: every point and box center turned clockwise
/// about +Z and every yaw reduced by the view angle. Room rectangles are
/// replaced by their rotated bounding rectangles.
pub fn rotate_scene(scene: &Scene, v: usize, views: usize) -> Result<Scene> {
    let theta = view_angle(v, views)?;
    if theta == 0.0 {
        return Ok(scene.clone());
    }
    let mut out = scene.clone();
    for inst in &mut out.instances {
        inst.obb.center = rotate_point(inst.obb.center, theta);
        inst.obb.yaw = wrap_angle(inst.obb.yaw - theta);
        for p in &mut inst.points {
            *p = rotate_point(*p, theta);
        }
    }
    for room in &mut out.rooms {
        let corners = [
            [room.bounds.min[0], room.bounds.min[1], 0.0],
            [room.bounds.max[0], room.bounds.min[1], 0.0],
            [room.bounds.max[0], room.bounds.max[1], 0.0],
            [room.bounds.min[0], room.bounds.max[1], 0.0],
        ]
        .map(|c| rotate_point(c, theta));
        let xs = corners.iter().map(|c| c[0]);
        let ys = corners.iter().map(|c| c[1]);
        room.bounds.min = [xs.clone().fold(f64::INFINITY, f64::min), ys.clone().fold(f64::INFINITY, f64::min)];
        room.bounds.max = [xs.fold(f64::NEG_INFINITY, f64::max), ys.fold(f64::NEG_INFINITY, f64::max)];
    }
    Ok(out)
}

/// `G = (1/V) sum_v O^v`.
pub fn aggregate_views<'t>(views: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = views
        .split_first()
        .ok_or_else(|| Error::Invalid("aggregate_views needs at least one view".into()))?;
    let shape = first.shape();
    let mut sum = *first;
    for v in rest {
        if v.shape() != shape {
            return Err(Error::shape("aggregate_views", &shape, &v.shape()));
        }
        sum = sum.add(v)?;
    }
    Ok(sum.scale(1.0 / views.len() as f64))
}

/// Cross-entropy over the vocabulary at masked positions; zero when none are masked.
pub fn mlm_loss<'t>(logits: &Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    cross_entropy_index(logits, targets)
}

/// Cross-entropy over categories at masked objects; zero when none are masked.
pub fn mom_loss<'t>(logits: &Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    cross_entropy_index(logits, targets)
}

/// Binary cross-entropy of the scene-text match logit(s).
pub fn ssm_loss<'t>(logits: &Var<'t>, matched: &[bool]) -> Result<Var<'t>> {
    let labels = Tensor::vector(matched.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    bce_with_logits(logits, &labels)
}

/// `alpha (MLM + MOM + SSM) + (1 - alpha) (ORP + MRWA + VRWA)`.
pub fn pretrain_loss<'t>(basic: [Var<'t>; 3], fine: [Var<'t>; 3], alpha: f64) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let b = basic[0].add(&basic[1])?.add(&basic[2])?;
    let f = fine[0].add(&fine[1])?.add(&fine[2])?;
    b.scale(alpha).add(&f.scale(1.0 - alpha))
}

/// Scalar form of [`pretrain_loss`] over the two group sums.
pub fn combine_pretrain(alpha: f64, basic_sum: f64, fine_sum: f64) -> f64 {
    alpha * basic_sum + (1.0 - alpha) * fine_sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn uniform_relations_cost_log_k() {
        let tape = Tape::new();
        let logits = tape.var(Tensor::zeros(&[4, 3]));
        let mut r = RelationMatrix::zeros(2);
        r.set(0, 1, 2);
        r.set(1, 0, 1);
        let loss = orp_loss(&logits, &r).unwrap().item();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_half_on_one_pair() {
        let tape = Tape::new();
        let big = 1e3;
        // Pair (0, 1) splits mass between classes 0 and 2; the others are exact.
        let rows = vec![
            vec![big, 0.0, 0.0],
            vec![0.0, -big, 0.0],
            vec![big, 0.0, 0.0],
            vec![big, 0.0, 0.0],
        ];
        let logits = tape.var(Tensor::from_rows(&rows, 3).unwrap());
        let mut r = RelationMatrix::zeros(2);
        r.set(0, 1, 2);
        let loss = orp_loss(&logits, &r).unwrap().item();
        assert!((loss - 0.25 * -(0.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn match_loss_hand_value() {
        let tape = Tape::new();
        let y = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        let logits = tape.var(Tensor::zeros(&[2, 2]));
        let literal = match_loss(&logits, &y, false).unwrap().item();
        assert!((literal - (-0.25 * 2.0 * 0.5f64.ln())).abs() < 1e-12);
        // With negatives, confident rejections of the off-diagonal leave the value unchanged.
        let l2 = tape.var(Tensor::from_rows(&[vec![0.0, -60.0], vec![-60.0, 0.0]], 2).unwrap());
        let with_neg = match_loss(&l2, &y, true).unwrap().item();
        assert!((with_neg - literal).abs() < 1e-12);
        let empty = tape.var(Tensor::zeros(&[0, 3]));
        assert_eq!(match_loss(&empty, &Tensor::zeros(&[0, 3]), true).unwrap().item(), 0.0);
    }

    #[test]
    fn padding_unmatched_objects_changes_only_normalization() {
        let tape = Tape::new();
        let y2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        let y4 = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]], 4).unwrap();
        let a = match_loss(&tape.var(Tensor::zeros(&[2, 2])), &y2, false).unwrap().item();
        let b = match_loss(&tape.var(Tensor::zeros(&[2, 4])), &y4, false).unwrap().item();
        assert!((a * 4.0 - b * 8.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_sends_x_to_minus_y() {
        let theta = view_angle(2, 4).unwrap();
        assert_eq!(theta, std::f64::consts::FRAC_PI_2);
        let p = rotate_point([1.0, 0.0, 0.0], theta);
        assert!((p[0]).abs() < 1e-15 && (p[1] + 1.0).abs() < 1e-15);
        assert_eq!(view_angle(1, 4).unwrap(), 0.0);
        assert!(view_angle(5, 4).is_err());
    }

    #[test]
    fn view_mean_and_order() {
        let tape = Tape::new();
        let a = tape.var(Tensor::from_rows(&[vec![1.0, 1.0]], 2).unwrap());
        let b = tape.var(Tensor::from_rows(&[vec![3.0, 3.0]], 2).unwrap());
        assert_eq!(aggregate_views(&[a, b]).unwrap().value().data(), &[2.0, 2.0]);
        assert_eq!(
            aggregate_views(&[a, b]).unwrap().value(),
            aggregate_views(&[b, a]).unwrap().value()
        );
        let c = tape.var(Tensor::zeros(&[2, 2]));
        assert!(aggregate_views(&[a, c]).is_err());
    }

    #[test]
    fn basic_losses_at_known_points() {
        let tape = Tape::new();
        let mom = mom_loss(&tape.var(Tensor::zeros(&[3, 108])), &[0, 5, 107]).unwrap().item();
        assert!((mom - 108f64.ln()).abs() < 1e-12);
        let ssm = ssm_loss(&tape.var(Tensor::zeros(&[1, 1])), &[true]).unwrap().item();
        assert!((ssm - 2f64.ln()).abs() < 1e-12);
        let none = mlm_loss(&tape.var(Tensor::zeros(&[0, 10])), &[]).unwrap().item();
        assert_eq!(none, 0.0);
        assert!((combine_pretrain(0.5, 1.2, 0.8) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn labels_follow_spans() {
        let spans = [
            PhraseSpan {
                token_start: 1,
                token_end: 4,
                instance_id: 7,
            },
            PhraseSpan {
                token_start: 6,
                token_end: 7,
                instance_id: 2,
            },
        ];
        let y = alignment_labels(8, &spans, &[2, 7, 9]);
        let ones: Vec<(usize, usize)> = (0..8)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| y.get(i, j) == 1.0)
            .collect();
        assert_eq!(ones, vec![(1, 1), (2, 1), (3, 1), (6, 0)]);
    }
}
