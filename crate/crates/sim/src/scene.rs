//! Primitive-based world: axis-aligned boxes, spheres and a ground
//! half-space.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Box { min: [f64; 3], max: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
    /// Solid below height `z`.
    Ground { z: f64 },
}

fn always_visible() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    /// Probability that the primitive shows up in a given scan. Collisions
    /// always count.
    #[serde(default = "always_visible")]
    pub visibility: f64,
}

impl Primitive {
    pub fn new(shape: Shape) -> Self {
        Self { shape, visibility: 1.0 }
    }

    pub fn with_visibility(mut self, p: f64) -> Self {
        self.visibility = p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bounds: Aabb,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl Shape {
    /// Distance along the unit ray `dir` from `origin` to the first surface
    /// hit, for an origin outside the shape.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Shape::Box { min, max } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[i];
                    let (a, b) = ((min[i] - origin[i]) * inv, (max[i] - origin[i]) * inv);
                    let (a, b) = if a <= b { (a, b) } else { (b, a) };
                    t_near = t_near.max(a);
                    t_far = t_far.min(b);
                }
                (t_near <= t_far && t_near > 0.0).then_some(t_near)
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - Vector3::from(center);
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > 0.0).then_some(t)
            }
            Shape::Ground { z } => (dir.z < 0.0 && origin.z > z).then(|| (origin.z - z) / -dir.z),
        }
    }

    /// Euclidean distance from `p` to the shape, zero on or inside it.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Box { min, max } => {
                let mut d2 = 0.0;
                for i in 0..3 {
                    let e = (min[i] - p[i]).max(p[i] - max[i]).max(0.0);
                    d2 += e * e;
                }
                d2.sqrt()
            }
            Shape::Sphere { center, radius } => ((p - Vector3::from(center)).norm() - radius).max(0.0),
            Shape::Ground { z } => (p.z - z).max(0.0),
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Box { min, max } => (0..3).all(|i| p[i] >= min[i] && p[i] <= max[i]),
            Shape::Sphere { center, radius } => (p - Vector3::from(center)).norm() <= radius,
            Shape::Ground { z } => p.z <= z,
        }
    }

    /// Center and radius of a sphere enclosing the shape; `None` when
    /// unbounded.
    pub fn bounding_sphere(&self) -> Option<(Vector3<f64>, f64)> {
        match *self {
            Shape::Box { min, max } => {
                let (lo, hi) = (Vector3::from(min), Vector3::from(max));
                Some(((lo + hi) * 0.5, (hi - lo).norm() * 0.5))
            }
            Shape::Sphere { center, radius } => Some((Vector3::from(center), radius)),
            Shape::Ground { .. } => None,
        }
    }
}

impl Scene {
    pub fn new(bounds: Aabb, primitives: Vec<Primitive>) -> Result<Self, SimError> {
        let s = Self { bounds, primitives };
        s.validate()?;
        Ok(s)
    }

    pub fn empty() -> Self {
        Self {
            bounds: Aabb {
                min: [-1e3; 3],
                max: [1e3; 3],
            },
            primitives: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |i: usize, msg: &str| Err(SimError::Scene(format!("primitive {i}: {msg}")));
        if !(0..3).all(|i| self.bounds.min[i] < self.bounds.max[i]) {
            return Err(SimError::Scene("bounds must have min < max on every axis".into()));
        }
        let inside = |v: &[f64; 3]| self.bounds.contains(&Vector3::from(*v));
        for (i, p) in self.primitives.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.visibility) {
                return bad(i, "visibility must lie in [0, 1]");
            }
            match p.shape {
                Shape::Box { min, max } => {
                    if !(0..3).all(|k| min[k] < max[k]) {
                        return bad(i, "box dimensions must be positive");
                    }
                    if !inside(&min) || !inside(&max) {
                        return bad(i, "box lies outside the scene bounds");
                    }
                }
                Shape::Sphere { center, radius } => {
                    if !(radius > 0.0) {
                        return bad(i, "sphere radius must be positive");
                    }
                    let lo = [center[0] - radius, center[1] - radius, center[2] - radius];
                    let hi = [center[0] + radius, center[1] + radius, center[2] + radius];
                    if !inside(&lo) || !inside(&hi) {
                        return bad(i, "sphere lies outside the scene bounds");
                    }
                }
                Shape::Ground { z } => {
                    if !(z >= self.bounds.min[2] && z <= self.bounds.max[2]) {
                        return bad(i, "ground height outside the scene bounds");
                    }
                }
            }
        }
        Ok(())
    }

    /// Distance to the closest surface, `+∞` for an empty scene.
    pub fn nearest_distance(&self, p: &Vector3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.shape.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_inside_any(&self, p: &Vector3<f64>) -> bool {
        self.primitives.iter().any(|prim| prim.shape.contains(p))
    }
}
