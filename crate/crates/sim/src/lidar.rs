//! Ray-cast LiDAR with world-aligned axes.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rangeavoid::range_image::point_to_angles;
use rangeavoid::{ImageGeometry, RangeImage};
use serde::{Deserialize, Serialize};

use crate::scene::{Scene, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    /// Returns beyond this distance are dropped (m).
    pub max_range: f64,
    /// Standard deviation of additive Gaussian range noise (m).
    pub range_noise_std: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            max_range: 100.0,
            range_noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanOutcome {
    Clear(RangeImage),
    /// The sensor origin lies inside a primitive.
    Collided,
}

/// One ray per pixel center from `origin`. `visible[i]` masks primitive `i`.
pub fn raycast_scan(
    scene: &Scene,
    visible: &[bool],
    origin: &Vector3<f64>,
    geometry: &ImageGeometry,
    lidar: &LidarConfig,
) -> ScanOutcome {
    if scene.is_inside_any(origin) {
        return ScanOutcome::Collided;
    }
    let g = geometry;
    let table = g.direction_table();
    let mut depth = vec![f64::INFINITY; g.len()];

    for (prim, _) in scene.primitives.iter().zip(visible).filter(|(_, &v)| v) {
        match prim.shape {
            Shape::Ground { .. } => {
                for row in 0..g.height {
                    for col in 0..g.width {
                        let i = row * g.width + col;
                        if let Some(t) = prim.shape.ray_hit(origin, &table.unit(col, row)) {
                            depth[i] = depth[i].min(t);
                        }
                    }
                }
            }
            _ => {
                let Some(win) = Window::for_shape(&prim.shape, origin, g) else {
                    continue;
                };
                for row in win.rows.0..=win.rows.1 {
                    for c in win.cols.0..=win.cols.1 {
                        let col = c.rem_euclid(g.width as i64) as usize;
                        let i = row * g.width + col;
                        if let Some(t) = prim.shape.ray_hit(origin, &table.unit(col, row)) {
                            depth[i] = depth[i].min(t);
                        }
                    }
                }
            }
        }
    }

    let ranges = depth
        .into_iter()
        .map(|d| if d <= lidar.max_range { d } else { 0.0 })
        .collect();
    ScanOutcome::Clear(RangeImage::from_ranges(*g, ranges).expect("geometry already validated"))
}

/// Pixel window that covers every ray able to hit a bounded shape.
struct Window {
    rows: (usize, usize),
    /// Inclusive, may extend past the image edges; wrap modulo width.
    cols: (i64, i64),
}

impl Window {
    fn for_shape(shape: &Shape, origin: &Vector3<f64>, g: &ImageGeometry) -> Option<Self> {
        let (center, radius) = shape.bounding_sphere()?;
        let rel = center - origin;
        let dist = rel.norm();
        let full = Window {
            rows: (0, g.height - 1),
            cols: (0, g.width as i64 - 1),
        };
        if dist <= radius * (1.0 + 1e-9) {
            return Some(full);
        }
        let alpha = (radius / dist).asin();
        let (phi_c, theta_c) = point_to_angles(&rel).ok()?;

        let (dth, dph) = (g.theta_step(), g.phi_step());
        let lo = theta_c - alpha;
        let hi = theta_c + alpha;
        if hi < g.theta_min - dth || lo > g.theta_max + dth {
            return None;
        }
        let row_lo = (((lo - g.theta_min) / dth).floor() - 1.0).max(0.0) as usize;
        let row_hi = (((hi - g.theta_min) / dth).ceil() + 1.0).min((g.height - 1) as f64) as usize;

        if theta_c.abs() + alpha >= FRAC_PI_2 - 1e-9 {
            return Some(Window {
                rows: (row_lo, row_hi),
                ..full
            });
        }
        let beta = (alpha.sin() / theta_c.cos()).min(1.0).asin();
        let c_lo = ((phi_c - beta + PI) / dph).floor() as i64 - 1;
        let c_hi = ((phi_c + beta + PI) / dph).ceil() as i64 + 1;
        let cols = if c_hi - c_lo + 1 >= g.width as i64 {
            full.cols
        } else {
            (c_lo, c_hi)
        };
        Some(Window {
            rows: (row_lo, row_hi),
            cols,
        })
    }
}

/// Adds zero-mean Gaussian noise to every valid range. Ranges pushed to or
/// below zero are dropped.
pub fn apply_range_noise<R: Rng>(img: &RangeImage, std: f64, rng: &mut R) -> RangeImage {
    if std <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, std).expect("positive std");
    let ranges = img
        .ranges()
        .iter()
        .map(|&r| if r > 0.0 { (r + normal.sample(rng)).max(0.0) } else { r })
        .collect();
    RangeImage::from_ranges(*img.geometry(), ranges).expect("same geometry")
}
