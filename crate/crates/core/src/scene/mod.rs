//! Indoor scenes: rooms, oriented boxes and surface-sampled object points.

mod catalog;
mod synth;

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

pub use catalog::{Catalog, CategorySpec};
pub use synth::{generate_scene, sample_surface_points, GeneratedScene, GenerationConfig};

use crate::error::{Error, Result};
use crate::geometry::{Vec2, Vec3};

/// Oriented box: center, full extents and a rotation about +Z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
}

impl Obb {
    pub fn new(center: Vec3, size: Vec3, yaw: f64) -> Result<Self> {
        let obb = Obb { center, size, yaw };
        obb.validate()?;
        Ok(obb)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Invalid(format!("box size must be positive, got {:?}", self.size)));
        }
        if !(0.0..TAU).contains(&self.yaw) {
            return Err(Error::Invalid(format!("yaw {} outside [0, 2pi)", self.yaw)));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("box center".into()));
        }
        Ok(())
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - 0.5 * self.size[2]
    }

    pub fn top(&self) -> f64 {
        self.center[2] + 0.5 * self.size[2]
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    pub fn footprint_area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    /// Local frame axes in the floor plane: (local +X, local +Y).
    pub fn axes(&self) -> (Vec2, Vec2) {
        let (s, c) = self.yaw.sin_cos();
        ([c, s], [-s, c])
    }

    /// Floor-plane corners in counter-clockwise order.
    pub fn footprint(&self) -> [Vec2; 4] {
        let (ux, uy) = self.axes();
        let hx = 0.5 * self.size[0];
        let hy = 0.5 * self.size[1];
        let [cx, cy, _] = self.center;
        let corner = |sx: f64, sy: f64| {
            [
                cx + sx * hx * ux[0] + sy * hy * uy[0],
                cy + sx * hx * ux[1] + sy * hy * uy[1],
            ]
        };
        [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)]
    }

    /// Half extents of the world-axis-aligned rectangle enclosing the footprint.
    pub fn footprint_half_extents(&self) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        let hx = 0.5 * self.size[0];
        let hy = 0.5 * self.size[1];
        [hx * c.abs() + hy * s.abs(), hx * s.abs() + hy * c.abs()]
    }

    /// World point to box-local coordinates.
    pub fn to_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Distance from `p` to the box surface (boundary), in meters.
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        let l = self.to_local(p);
        let h = [0.5 * self.size[0], 0.5 * self.size[1], 0.5 * self.size[2]];
        let q: Vec<f64> = (0..3).map(|i| l[i].abs() - h[i]).collect();
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(0.0);
        outside + inside.abs()
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Appearance attribute: color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    White,
    Black,
    Gray,
    Red,
    Blue,
    Green,
    Brown,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::White,
        Color::Black,
        Color::Gray,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Brown,
        Color::Yellow,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::White => "white",
            Color::Black => "black",
            Color::Gray => "gray",
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Brown => "brown",
            Color::Yellow => "yellow",
        }
    }
}

/// Appearance attribute: material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Wooden,
    Metal,
    Plastic,
    Fabric,
    Glass,
    Leather,
}

impl Material {
    pub const ALL: [Material; 6] = [
        Material::Wooden,
        Material::Metal,
        Material::Plastic,
        Material::Fabric,
        Material::Glass,
        Material::Leather,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Material::Wooden => "wooden",
            Material::Metal => "metal",
            Material::Plastic => "plastic",
            Material::Fabric => "fabric",
            Material::Glass => "glass",
            Material::Leather => "leather",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    /// Index into the generating [`Catalog`].
    pub category: usize,
    pub color: Color,
    pub material: Material,
    pub obb: Obb,
    pub points: Vec<Vec3>,
    pub room_id: u32,
    /// Id of the instance whose top face this one rests on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported_by: Option<u32>,
}

/// Axis-aligned floor rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn depth(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.depth()
    }

    pub fn contains(&self, p: Vec2, tol: f64) -> bool {
        p[0] >= self.min[0] - tol && p[0] <= self.max[0] + tol && p[1] >= self.min[1] - tol && p[1] <= self.max[1] + tol
    }

    /// Area of the intersection with another rectangle.
    pub fn overlap_area(&self, other: &Rect) -> f64 {
        let w = (self.max[0].min(other.max[0]) - self.min[0].max(other.min[0])).max(0.0);
        let d = (self.max[1].min(other.max[1]) - self.min[1].max(other.min[1])).max(0.0);
        w * d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: u32,
    pub bounds: Rect,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub seed: u64,
    pub rooms: Vec<Room>,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn room(&self, id: u32) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    pub fn instances_in_room(&self, room_id: u32) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(move |i| i.room_id == room_id)
    }

    /// Checks the structural invariants: unique ids, valid boxes, room
    /// containment and support stacking. Collision freedom is checked
    /// separately since it is quadratic.
    pub fn validate(&self, num_categories: usize) -> Result<()> {
        let bad = |m: String| Error::Invalid(format!("scene {}: {m}", self.id));
        for (i, r) in self.rooms.iter().enumerate() {
            if !(r.bounds.area() > 0.0) || !(r.height > 0.0) {
                return Err(bad(format!("room {} has no area", r.id)));
            }
            for s in &self.rooms[i + 1..] {
                if r.id == s.id {
                    return Err(bad(format!("duplicate room id {}", r.id)));
                }
                if r.bounds.overlap_area(&s.bounds) > 1e-9 {
                    return Err(bad(format!("rooms {} and {} overlap", r.id, s.id)));
                }
            }
        }
        let mut ids: Vec<u32> = self.instances.iter().map(|i| i.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("duplicate instance ids".into()));
        }
        for inst in &self.instances {
            inst.obb.validate()?;
            if inst.category >= num_categories {
                return Err(bad(format!("instance {} category {} out of range", inst.id, inst.category)));
            }
            let room = self
                .room(inst.room_id)
                .ok_or_else(|| bad(format!("instance {} in unknown room {}", inst.id, inst.room_id)))?;
            if inst.obb.footprint().iter().any(|&c| !room.bounds.contains(c, 1e-6)) {
                return Err(bad(format!("instance {} leaves room {}", inst.id, room.id)));
            }
            if let Some(sup) = inst.supported_by {
                let s = self
                    .instance(sup)
                    .ok_or_else(|| bad(format!("instance {} supported by missing {sup}", inst.id)))?;
                if (inst.obb.bottom() - s.obb.top()).abs() > 1e-6 {
                    return Err(bad(format!("instance {} does not rest on {sup}", inst.id)));
                }
            }
            if let Some(p) = inst.points.iter().find(|&&p| inst.obb.surface_distance(p) > 1e-6) {
                return Err(bad(format!("instance {} point {p:?} off its box surface", inst.id)));
            }
        }
        Ok(())
    }

    pub fn in_support_relation(&self, a: &Instance, b: &Instance) -> bool {
        a.supported_by == Some(b.id) || b.supported_by == Some(a.id)
    }
}
