use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::PathBuf;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{wrap_angle, Catalog, Color, Instance, Material, Obb, Rect, Room, Scene};
use crate::error::{Error, Result};
use crate::geometry::{quantize, quantize3, separation, Vec3};

/// Scene generation parameters; the `[generation]` table of the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Category catalog file; the built-in 108-category catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Inclusive range of rooms per scene.
    pub rooms: [usize; 2],
    /// Inclusive range of requested instances per room.
    pub instances_per_room: [usize; 2],
    pub points_per_object: usize,
    /// Placement attempts per object before it is dropped.
    pub rejection_budget: usize,
    pub min_room_side: f64,
    /// Floor area range per room, square meters.
    pub room_area: [f64; 2],
    pub room_height: [f64; 2],
    /// Probability that a small object is placed on a supporting surface.
    pub support_probability: f64,
    /// Gap kept between objects and walls.
    pub wall_margin: f64,
    /// Minimum horizontal separation between objects that share a height range.
    pub clearance: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            rooms: [1, 3],
            instances_per_room: [2, 8],
            points_per_object: 256,
            rejection_budget: 1000,
            min_room_side: 2.0,
            room_area: [12.0, 24.0],
            room_height: [2.4, 3.0],
            support_probability: 0.35,
            wall_margin: 0.05,
            clearance: 0.02,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("generation: {m}")));
        if self.rooms[0] == 0 || self.rooms[0] > self.rooms[1] {
            return err("rooms must be a non-empty range starting at >= 1");
        }
        if self.instances_per_room[0] > self.instances_per_room[1] {
            return err("instances_per_room range is empty");
        }
        if !(self.min_room_side > 0.0) || !(self.room_area[0] > 0.0) || self.room_area[0] > self.room_area[1] {
            return err("room sizes must be positive ranges");
        }
        if !(self.room_height[0] > 0.0) || self.room_height[0] > self.room_height[1] {
            return err("room_height must be a positive range");
        }
        if !(0.0..=1.0).contains(&self.support_probability) {
            return err("support_probability must be in [0, 1]");
        }
        if self.rejection_budget == 0 {
            return err("rejection_budget must be positive");
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(path) => Catalog::load(path),
            None => Ok(Catalog::default()),
        }
    }
}

/// A generated scene plus the number of objects dropped after exhausting
/// their placement budget.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub placement_failures: usize,
}

/// Deterministically generates one scene from `seed`.
pub fn generate_scene(seed: u64, config: &GenerationConfig, catalog: &Catalog) -> Result<GeneratedScene> {
    config.validate()?;
    catalog.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rooms = layout_rooms(config, &mut rng);
    let weights = WeightedIndex::new(catalog.categories.iter().map(|c| c.weight))
        .map_err(|e| Error::Config(format!("catalog weights: {e}")))?;

    let mut placed: Vec<Instance> = Vec::new();
    let mut failures = 0;
    for room in &rooms {
        let [lo, hi] = config.instances_per_room;
        let wanted = rng.gen_range(lo..=hi);
        for _ in 0..wanted {
            let category = weights.sample(&mut rng);
            match place_object(category, room, &placed, config, catalog, &mut rng) {
                Some((obb, supported_by)) => {
                    let id = placed.len() as u32;
                    let points = sample_surface_points(&obb, config.points_per_object, &mut rng)
                        .into_iter()
                        .map(quantize3)
                        .collect();
                    placed.push(Instance {
                        id,
                        category,
                        color: *Color::ALL.choose(&mut rng).expect("non-empty"),
                        material: *Material::ALL.choose(&mut rng).expect("non-empty"),
                        obb,
                        points,
                        room_id: room.id,
                        supported_by,
                    });
                }
                None => failures += 1,
            }
        }
    }
    if failures > 0 {
        log::debug!("scene {seed}: {failures} object(s) dropped after exhausting the placement budget");
    }
    Ok(GeneratedScene {
        scene: Scene {
            id: seed,
            seed,
            rooms,
            instances: placed,
        },
        placement_failures: failures,
    })
}

/// Recursive binary splits of a footprint centered at the origin.
fn layout_rooms(config: &GenerationConfig, rng: &mut ChaCha8Rng) -> Vec<Room> {
    let [lo, hi] = config.rooms;
    let count = rng.gen_range(lo..=hi);
    let min_side = config.min_room_side;
    let area = count as f64 * rng.gen_range(config.room_area[0]..=config.room_area[1]);
    let aspect = rng.gen_range(1.0..1.6);
    let width = (area * aspect).sqrt().max(min_side);
    let depth = (area / width).max(min_side);
    let (w, d) = (quantize(width), quantize(depth));
    let mut rects = vec![Rect {
        min: [quantize(-0.5 * w), quantize(-0.5 * d)],
        max: [quantize(0.5 * w), quantize(0.5 * d)],
    }];
    while rects.len() < count {
        // Split the largest rectangle whose longer side fits two rooms.
        let candidate = rects
            .iter()
            .enumerate()
            .filter(|(_, r)| r.width().max(r.depth()) >= 2.0 * min_side)
            .max_by(|a, b| a.1.area().total_cmp(&b.1.area()))
            .map(|(i, _)| i);
        let Some(i) = candidate else { break };
        let r = rects.swap_remove(i);
        let along_x = r.width() >= r.depth();
        let (start, len) = if along_x { (r.min[0], r.width()) } else { (r.min[1], r.depth()) };
        let frac_lo = (min_side / len).max(0.35);
        let frac_hi = (1.0 - min_side / len).min(0.65);
        let frac = if frac_lo < frac_hi {
            rng.gen_range(frac_lo..=frac_hi)
        } else {
            0.5
        };
        let cut = quantize(start + frac * len);
        let (a, b) = if along_x {
            (
                Rect { min: r.min, max: [cut, r.max[1]] },
                Rect { min: [cut, r.min[1]], max: r.max },
            )
        } else {
            (
                Rect { min: r.min, max: [r.max[0], cut] },
                Rect { min: [r.min[0], cut], max: r.max },
            )
        };
        rects.push(a);
        rects.push(b);
    }
    rects.sort_by(|a, b| (a.min[1], a.min[0]).partial_cmp(&(b.min[1], b.min[0])).expect("finite"));
    rects
        .into_iter()
        .enumerate()
        .map(|(i, bounds)| Room {
            id: i as u32,
            bounds,
            height: quantize(rng.gen_range(config.room_height[0]..=config.room_height[1])),
        })
        .collect()
}

fn sample_size(prior: [f64; 3], rng: &mut ChaCha8Rng) -> Vec3 {
    quantize3([
        prior[0] * rng.gen_range(0.85..1.15),
        prior[1] * rng.gen_range(0.85..1.15),
        prior[2] * rng.gen_range(0.85..1.15),
    ])
}

fn collides(obb: &Obb, placed: &[Instance], ignore: Option<u32>, clearance: f64) -> bool {
    let fp = obb.footprint();
    placed.iter().filter(|p| Some(p.id) != ignore).any(|p| {
        let vertical = obb.top().min(p.obb.top()) - obb.bottom().max(p.obb.bottom());
        vertical > 1e-9 && separation(&fp, &p.obb.footprint()) < clearance
    })
}

fn place_object(
    category: usize,
    room: &Room,
    placed: &[Instance],
    config: &GenerationConfig,
    catalog: &Catalog,
    rng: &mut ChaCha8Rng,
) -> Option<(Obb, Option<u32>)> {
    let spec = &catalog.categories[category];
    let size = sample_size(spec.size, rng);
    if size[2] >= room.height {
        return None;
    }
    let supporters: Vec<&Instance> = if spec.small {
        placed
            .iter()
            .filter(|p| p.room_id == room.id && catalog.categories[p.category].surface && p.supported_by.is_none())
            .collect()
    } else {
        Vec::new()
    };
    let on_surface = !supporters.is_empty() && rng.gen_bool(config.support_probability);
    let margin = config.wall_margin;

    for _ in 0..config.rejection_budget {
        if on_surface {
            let sup = supporters[rng.gen_range(0..supporters.len())];
            let turn = if rng.gen_bool(0.5) { 0.0 } else { FRAC_PI_2 };
            // Extents of the object measured along the supporter's local axes.
            let (ex, ey) = if turn == 0.0 {
                (0.5 * size[0], 0.5 * size[1])
            } else {
                (0.5 * size[1], 0.5 * size[0])
            };
            let free_x = 0.5 * sup.obb.size[0] - ex - 0.01;
            let free_y = 0.5 * sup.obb.size[1] - ey - 0.01;
            if free_x < 0.0 || free_y < 0.0 {
                continue;
            }
            let lx = rng.gen_range(-free_x..=free_x);
            let ly = rng.gen_range(-free_y..=free_y);
            let (ux, uy) = sup.obb.axes();
            let bottom = sup.obb.top();
            if bottom + size[2] >= room.height {
                continue;
            }
            let center = quantize3([
                sup.obb.center[0] + lx * ux[0] + ly * uy[0],
                sup.obb.center[1] + lx * ux[1] + ly * uy[1],
                bottom + 0.5 * size[2],
            ]);
            let yaw = quantize(wrap_angle(sup.obb.yaw + turn));
            let yaw = if yaw >= TAU { 0.0 } else { yaw };
            let obb = Obb { center, size, yaw };
            if !obb.footprint().iter().all(|&c| room.bounds.contains(c, -1e-4)) {
                continue;
            }
            if !collides(&obb, placed, Some(sup.id), config.clearance) {
                return Some((obb, Some(sup.id)));
            }
        } else {
            let yaw = if rng.gen_bool(0.7) {
                FRAC_PI_2 * rng.gen_range(0..4) as f64
            } else {
                rng.gen_range(0.0..TAU)
            };
            let yaw = quantize(yaw);
            let yaw = if yaw >= TAU { 0.0 } else { yaw };
            let probe = Obb { center: [0.0; 3], size, yaw };
            let [hx, hy] = probe.footprint_half_extents();
            let (x0, x1) = (room.bounds.min[0] + margin + hx, room.bounds.max[0] - margin - hx);
            let (y0, y1) = (room.bounds.min[1] + margin + hy, room.bounds.max[1] - margin - hy);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let center = quantize3([rng.gen_range(x0..=x1), rng.gen_range(y0..=y1), 0.5 * size[2]]);
            let obb = Obb { center, size, yaw };
            if !collides(&obb, placed, None, config.clearance) {
                return Some((obb, None));
            }
        }
    }
    None
}

/// Samples `n` points uniformly (by area) over the surface of `obb`.
pub fn sample_surface_points(obb: &Obb, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let [w, d, h] = obb.size;
    // Face pairs normal to local X, Y, Z.
    let areas = [d * h, d * h, w * h, w * h, w * d, w * d];
    let total: f64 = areas.iter().sum();
    let (s, c) = obb.yaw.sin_cos();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 5;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    face = i;
                    break;
                }
                pick -= a;
            }
            let u = rng.gen_range(-0.5..=0.5);
            let v = rng.gen_range(-0.5..=0.5);
            let sign = if face % 2 == 0 { 0.5 } else { -0.5 };
            let local = match face / 2 {
                0 => [sign * w, u * d, v * h],
                1 => [u * w, sign * d, v * h],
                _ => [u * w, v * d, sign * h],
            };
            [
                obb.center[0] + c * local[0] - s * local[1],
                obb.center[1] + s * local[0] + c * local[1],
                obb.center[2] + local[2],
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_instances_gives_rooms_only() {
        let config = GenerationConfig {
            instances_per_room: [0, 0],
            ..Default::default()
        };
        let g = generate_scene(42, &config, &Catalog::default()).unwrap();
        assert!(!g.scene.rooms.is_empty());
        assert!(g.scene.instances.is_empty());
        assert_eq!(g.placement_failures, 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = GenerationConfig::default();
        let catalog = Catalog::default();
        let a = generate_scene(7, &config, &catalog).unwrap();
        let b = generate_scene(7, &config, &catalog).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a.scene).unwrap(),
            serde_json::to_string(&b.scene).unwrap()
        );
    }

    #[test]
    fn rooms_respect_minimum_side_and_tile_the_footprint() {
        let config = GenerationConfig {
            rooms: [3, 3],
            ..Default::default()
        };
        for seed in 0..50 {
            let s = generate_scene(seed, &config, &Catalog::default()).unwrap().scene;
            for r in &s.rooms {
                assert!(r.bounds.width() >= config.min_room_side - 1e-9);
                assert!(r.bounds.depth() >= config.min_room_side - 1e-9);
            }
            s.validate(108).unwrap();
        }
    }

    #[test]
    fn unit_cube_points_lie_on_surface() {
        let obb = Obb::new([0.0; 3], [1.0; 3], 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_surface_points(&obb, 1000, &mut rng);
        assert_eq!(pts.len(), 1000);
        for p in &pts {
            let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!((m - 0.5).abs() < 1e-6, "{p:?}");
        }
        assert!(sample_surface_points(&obb, 0, &mut rng).is_empty());
    }

    #[test]
    fn quarter_turn_swaps_point_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let extents = |yaw: f64, rng: &mut ChaCha8Rng| {
            let obb = Obb::new([0.0; 3], [3.0, 1.0, 0.5], yaw).unwrap();
            let pts = sample_surface_points(&obb, 4000, rng);
            let span = |k: usize| {
                let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            };
            (span(0), span(1))
        };
        let (x0, y0) = extents(0.0, &mut rng);
        let (x1, y1) = extents(FRAC_PI_2, &mut rng);
        assert!((x0 - 3.0).abs() < 0.05 && (y0 - 1.0).abs() < 0.05);
        assert!((x1 - y0).abs() < 0.05 && (y1 - x0).abs() < 0.05);
    }
}
