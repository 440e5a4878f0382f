//! Range-image geometry: pixel/angle/point conversions and rigid warping.
//!
//! Pixel `(col, row)` has its center at azimuth `-π + col·Δφ` and elevation
//! `θ_min + row·Δθ`. Quantization picks the nearest center, so pixel centers
//! are fixed points of the projection round trip.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::{AvoidError, Result};

/// Range value reserved for "no return".
pub const INVALID_RANGE: f64 = 0.0;

/// Slack for elevations that land a hair outside the field of view after a
/// projection round trip.
const FOV_EPS: f64 = 1e-9;

#[inline]
pub fn is_valid_range(r: f64) -> bool {
    r > 0.0
}

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    // floor() can leave exactly π behind for inputs just below -π
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    /// Azimuth bins covering `[-π, π)`.
    pub width: usize,
    /// Elevation bins covering `[theta_min, theta_max]`.
    pub height: usize,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for ImageGeometry {
    /// 512×128 with a ±45° vertical field of view, the layout of a
    /// wide-angle 128-beam spinning LiDAR.
    fn default() -> Self {
        Self {
            width: 512,
            height: 128,
            theta_min: -FRAC_PI_4,
            theta_max: FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub col: usize,
    pub row: usize,
}

impl Pixel {
    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

impl ImageGeometry {
    pub fn new(width: usize, height: usize, theta_min: f64, theta_max: f64) -> Result<Self> {
        let g = Self {
            width,
            height,
            theta_min,
            theta_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(AvoidError::InvalidGeometry(msg.to_string()));
        if self.width < 4 || self.height < 2 {
            return fail("need width >= 4 and height >= 2");
        }
        if !(self.theta_min.is_finite() && self.theta_max.is_finite()) {
            return fail("field of view must be finite");
        }
        if self.theta_min >= self.theta_max {
            return fail("theta_min must be below theta_max");
        }
        if self.theta_max - self.theta_min > PI {
            return fail("vertical field of view exceeds π");
        }
        if self.theta_min < -FRAC_PI_2 || self.theta_max > FRAC_PI_2 {
            return fail("field of view must lie within [-π/2, π/2]");
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn phi_step(&self) -> f64 {
        TAU / self.width as f64
    }

    #[inline]
    pub fn theta_step(&self) -> f64 {
        (self.theta_max - self.theta_min) / self.height as f64
    }

    #[inline]
    pub fn contains(&self, px: Pixel) -> bool {
        px.col < self.width && px.row < self.height
    }

    #[inline]
    pub fn index(&self, px: Pixel) -> usize {
        px.row * self.width + px.col
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> Pixel {
        Pixel::new(index % self.width, index / self.width)
    }

    #[inline]
    pub fn phi_of_col(&self, col: usize) -> f64 {
        -PI + col as f64 * self.phi_step()
    }

    #[inline]
    pub fn theta_of_row(&self, row: usize) -> f64 {
        self.theta_min + row as f64 * self.theta_step()
    }

    /// Center angles `(φ, θ)` of a pixel.
    #[inline]
    pub fn pixel_angles(&self, px: Pixel) -> (f64, f64) {
        (self.phi_of_col(px.col), self.theta_of_row(px.row))
    }

    /// Nearest-bin quantization; `None` when θ is outside the vertical FoV.
    #[inline]
    pub fn angles_to_pixel(&self, phi: f64, theta: f64) -> Option<Pixel> {
        if !(theta >= self.theta_min - FOV_EPS && theta <= self.theta_max + FOV_EPS) {
            return None;
        }
        let row = ((theta - self.theta_min) / self.theta_step()).round().max(0.0) as usize;
        let row = row.min(self.height - 1);
        let col = ((wrap_angle(phi) + PI) / self.phi_step()).round() as usize % self.width;
        Some(Pixel::new(col, row))
    }

    pub fn direction_table(&self) -> DirectionTable {
        DirectionTable::new(self)
    }
}

/// Cached trigonometry for the pixel-center unit vectors of a geometry.
#[derive(Debug, Clone)]
pub struct DirectionTable {
    cos_phi: Vec<f64>,
    sin_phi: Vec<f64>,
    cos_theta: Vec<f64>,
    sin_theta: Vec<f64>,
}

impl DirectionTable {
    pub fn new(geom: &ImageGeometry) -> Self {
        let (sin_phi, cos_phi) = (0..geom.width).map(|c| geom.phi_of_col(c).sin_cos()).unzip();
        let (sin_theta, cos_theta) =
            (0..geom.height).map(|r| geom.theta_of_row(r).sin_cos()).unzip();
        Self {
            cos_phi,
            sin_phi,
            cos_theta,
            sin_theta,
        }
    }

    #[inline]
    pub fn unit(&self, col: usize, row: usize) -> Vector3<f64> {
        let ct = self.cos_theta[row];
        Vector3::new(ct * self.cos_phi[col], ct * self.sin_phi[col], self.sin_theta[row])
    }
}

/// Unit vector for spherical angles.
#[inline]
pub fn unit_from_angles(phi: f64, theta: f64) -> Vector3<f64> {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    Vector3::new(ct * cp, ct * sp, st)
}

/// Azimuth and elevation of a nonzero point. The `±z` poles map to `φ = 0`.
pub fn point_to_angles(p: &Vector3<f64>) -> Result<(f64, f64)> {
    let n = p.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(AvoidError::ZeroVector);
    }
    let phi = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        wrap_angle(p.y.atan2(p.x))
    };
    let theta = FRAC_PI_2 - (p.z / n).clamp(-1.0, 1.0).acos();
    Ok((phi, theta))
}

pub fn angles_to_pixel(geom: &ImageGeometry, phi: f64, theta: f64) -> Option<Pixel> {
    geom.angles_to_pixel(phi, theta)
}

/// Rigid transform of the sensor: the pose of the new sensor frame expressed
/// in the old one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self::new(-(rot_inv * self.translation), rot_inv)
    }

    /// `self` followed by `next` (next is expressed in the frame `self` moves to).
    pub fn then(&self, next: &RigidMotion) -> Self {
        Self::new(
            self.translation + self.rotation * next.translation,
            self.rotation * next.rotation,
        )
    }

    /// Maps coordinates in the moved frame to the original frame.
    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.translation == Vector3::zeros() && self.is_pure_translation()
    }

    pub fn is_pure_translation(&self) -> bool {
        self.rotation == UnitQuaternion::identity()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    geometry: ImageGeometry,
    ranges: Vec<f64>,
    ages: Vec<f64>,
}

impl RangeImage {
    /// Image with every pixel set to [`INVALID_RANGE`].
    pub fn invalid(geometry: ImageGeometry) -> Self {
        Self {
            geometry,
            ranges: vec![INVALID_RANGE; geometry.len()],
            ages: vec![0.0; geometry.len()],
        }
    }

    /// Builds an image from row-major ranges with all ages zero. Non-positive
    /// or non-finite values become invalid.
    pub fn from_ranges(geometry: ImageGeometry, ranges: Vec<f64>) -> Result<Self> {
        let ages = vec![0.0; ranges.len()];
        Self::from_parts(geometry, ranges, ages)
    }

    pub fn from_parts(geometry: ImageGeometry, mut ranges: Vec<f64>, ages: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if ranges.len() != geometry.len() || ages.len() != geometry.len() {
            return Err(AvoidError::InvalidGeometry(format!(
                "expected {} pixels, got {} ranges and {} ages",
                geometry.len(),
                ranges.len(),
                ages.len()
            )));
        }
        for r in ranges.iter_mut() {
            if !(r.is_finite() && *r > 0.0) {
                *r = INVALID_RANGE;
            }
        }
        Ok(Self {
            geometry,
            ranges,
            ages,
        })
    }

    #[inline]
    pub fn geometry(&self) -> &ImageGeometry {
        &self.geometry
    }

    #[inline]
    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    #[inline]
    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    fn check(&self, px: Pixel) -> Result<usize> {
        if self.geometry.contains(px) {
            Ok(self.geometry.index(px))
        } else {
            Err(AvoidError::PixelOutOfBounds {
                col: px.col,
                row: px.row,
                width: self.geometry.width,
                height: self.geometry.height,
            })
        }
    }

    /// Range at a pixel, `None` when invalid.
    pub fn range(&self, px: Pixel) -> Result<Option<f64>> {
        let r = self.ranges[self.check(px)?];
        Ok(is_valid_range(r).then_some(r))
    }

    pub fn age(&self, px: Pixel) -> Result<f64> {
        Ok(self.ages[self.check(px)?])
    }

    /// Stores a return. Non-positive or non-finite ranges store INVALID.
    pub fn set(&mut self, px: Pixel, range: f64, age: f64) -> Result<()> {
        let i = self.check(px)?;
        self.set_index(i, range, age);
        Ok(())
    }

    #[inline]
    pub(crate) fn set_index(&mut self, i: usize, range: f64, age: f64) {
        if range.is_finite() && range > 0.0 {
            self.ranges[i] = range;
            self.ages[i] = age;
        } else {
            self.ranges[i] = INVALID_RANGE;
            self.ages[i] = 0.0;
        }
    }

    pub fn invalidate(&mut self, px: Pixel) -> Result<()> {
        let i = self.check(px)?;
        self.set_index(i, INVALID_RANGE, 0.0);
        Ok(())
    }

    pub(crate) fn ranges_mut(&mut self) -> &mut [f64] {
        &mut self.ranges
    }

    pub(crate) fn ages_mut(&mut self) -> &mut [f64] {
        &mut self.ages
    }

    #[inline]
    pub(crate) fn keep_min(&mut self, i: usize, range: f64, age: f64) {
        let cur = self.ranges[i];
        if !is_valid_range(cur) || range < cur {
            self.ranges[i] = range;
            self.ages[i] = age;
        }
    }

    pub(crate) fn clear(&mut self) {
        self.ranges.fill(INVALID_RANGE);
        self.ages.fill(0.0);
    }

    /// `(index, range, age)` of every valid pixel in row-major order.
    pub fn valid(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.ranges
            .iter()
            .zip(&self.ages)
            .enumerate()
            .filter(|(_, (r, _))| is_valid_range(**r))
            .map(|(i, (r, a))| (i, *r, *a))
    }

    pub fn valid_count(&self) -> usize {
        self.ranges.iter().filter(|r| is_valid_range(**r)).count()
    }

    /// Closest valid return, `None` for an empty image.
    pub fn min_range(&self) -> Option<f64> {
        self.ranges
            .iter()
            .copied()
            .filter(|r| is_valid_range(*r))
            .min_by(f64::total_cmp)
    }

    /// Farthest valid return, `None` for an empty image.
    pub fn max_range(&self) -> Option<f64> {
        self.ranges
            .iter()
            .copied()
            .filter(|r| is_valid_range(*r))
            .max_by(f64::total_cmp)
    }

    /// Closest valid return, `+∞` for an empty image.
    pub fn nearest_distance(&self) -> f64 {
        self.min_range().unwrap_or(f64::INFINITY)
    }
}

/// Lifts a pixel to its 3D return; `Ok(None)` for invalid pixels.
pub fn pixel_to_point(img: &RangeImage, px: Pixel) -> Result<Option<Vector3<f64>>> {
    let Some(r) = img.range(px)? else {
        return Ok(None);
    };
    let (phi, theta) = img.geometry().pixel_angles(px);
    Ok(Some(unit_from_angles(phi, theta) * r))
}

/// Moves every return into the frame reached by `motion` and reprojects it.
/// Colliding returns keep the smaller range; ages travel with their return.
pub fn warp(img: &RangeImage, motion: &RigidMotion) -> RangeImage {
    let mut out = RangeImage::invalid(img.geometry);
    warp_into(img, motion, &mut out);
    out
}

/// [`warp`] into a caller-provided buffer of the same geometry.
pub fn warp_into(img: &RangeImage, motion: &RigidMotion, out: &mut RangeImage) {
    assert_eq!(img.geometry, out.geometry, "warp target geometry differs");
    if motion.is_identity() {
        out.ranges.copy_from_slice(&img.ranges);
        out.ages.copy_from_slice(&img.ages);
        return;
    }
    out.clear();
    let geom = img.geometry;
    let table = geom.direction_table();
    let projector = Projector::new(&geom);
    let inv = motion.inverse();
    for (i, r, age) in img.valid() {
        let px = geom.pixel_at(i);
        let q = inv.transform_point(&(table.unit(px.col, px.row) * r));
        let n = q.norm();
        if let Some(j) = projector.index(&q, n) {
            out.keep_min(j, n, age);
        }
    }
}

/// Pixel index of a point with known norm `n`, `None` outside the FoV.
#[inline]
pub(crate) fn project_index(geom: &ImageGeometry, q: &Vector3<f64>, n: f64) -> Option<usize> {
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    let theta = FRAC_PI_2 - (q.z / n).clamp(-1.0, 1.0).acos();
    if !(theta >= geom.theta_min - FOV_EPS && theta <= geom.theta_max + FOV_EPS) {
        return None;
    }
    let phi = if q.x == 0.0 && q.y == 0.0 { 0.0 } else { q.y.atan2(q.x) };
    let px = geom.angles_to_pixel(phi, theta)?;
    Some(geom.index(px))
}

/// Pixel lookup without inverse trigonometry. Bin edges are compared
/// against precomputed edge directions; points within a hair of an edge
/// fall back to [`project_index`], so both always pick the same pixel.
#[derive(Debug, Clone)]
pub(crate) struct Projector {
    geom: ImageGeometry,
    /// `(cos β, sin β)` of the lower azimuth edge of column `c`, `c = 0..=W`.
    col_edges: Vec<(f64, f64)>,
    /// sin of the lower elevation edge of rows `1..H`, ascending.
    row_edges: Vec<f64>,
    fov_lo: f64,
    fov_hi: f64,
    inv_phi_step: f64,
    inv_theta_step: f64,
}

/// Distance to a bin edge (in sine units) below which the exact path runs.
const EDGE_GUARD: f64 = 1e-12;

/// atan2 to within about 1e-5 rad; only used to guess a column.
#[inline]
fn rough_atan2(y: f64, x: f64) -> f64 {
    let (ax, ay) = (x.abs(), y.abs());
    let a = ax.min(ay) / ax.max(ay);
    let s = a * a;
    let mut r = ((-0.046_496_474_9 * s + 0.159_314_22) * s - 0.327_622_764) * s * a + a;
    if ay > ax {
        r = FRAC_PI_2 - r;
    }
    if x < 0.0 {
        r = PI - r;
    }
    if y < 0.0 {
        -r
    } else {
        r
    }
}

impl Projector {
    pub(crate) fn new(geom: &ImageGeometry) -> Self {
        let dphi = geom.phi_step();
        let dtheta = geom.theta_step();
        let col_edges = (0..=geom.width)
            .map(|c| {
                let b = -PI + (c as f64 - 0.5) * dphi;
                (b.cos(), b.sin())
            })
            .collect();
        let row_edges = (1..geom.height)
            .map(|k| (geom.theta_min + (k as f64 - 0.5) * dtheta).sin())
            .collect();
        Self {
            geom: *geom,
            col_edges,
            row_edges,
            fov_lo: (geom.theta_min - FOV_EPS).max(-FRAC_PI_2).sin(),
            fov_hi: (geom.theta_max + FOV_EPS).min(FRAC_PI_2).sin(),
            inv_phi_step: 1.0 / dphi,
            inv_theta_step: 1.0 / dtheta,
        }
    }

    /// Same result as [`project_index`].
    #[inline]
    pub(crate) fn index(&self, q: &Vector3<f64>, n: f64) -> Option<usize> {
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        match self.fast_index(q, n) {
            Ok(found) => found,
            Err(()) => project_index(&self.geom, q, n),
        }
    }

    #[inline]
    fn fast_index(&self, q: &Vector3<f64>, n: f64) -> std::result::Result<Option<usize>, ()> {
        let near = |a: f64, b: f64| (a - b).abs() < EDGE_GUARD;
        let s = (q.z / n).clamp(-1.0, 1.0);
        if near(s, self.fov_lo) || near(s, self.fov_hi) {
            return Err(());
        }
        if s < self.fov_lo || s > self.fov_hi {
            return Ok(None);
        }
        // asin series, good to a fraction of a row for |s| <= 0.75
        let s2 = s * s;
        let theta = s * (1.0 + s2 * (1.0 / 6.0 + s2 * (3.0 / 40.0 + s2 * (5.0 / 112.0 + s2 * (35.0 / 1152.0)))));
        let last = self.row_edges.len();
        let guess = (theta - self.geom.theta_min) * self.inv_theta_step + 0.5;
        let mut row = if guess > 0.0 { (guess as usize).min(last) } else { 0 };
        let mut settled = false;
        for _ in 0..3 {
            if row > 0 && s < self.row_edges[row - 1] {
                row -= 1;
            } else if row < last && s >= self.row_edges[row] {
                row += 1;
            } else {
                settled = true;
                break;
            }
        }
        if !settled
            || (row > 0 && near(s, self.row_edges[row - 1]))
            || (row < last && near(s, self.row_edges[row]))
        {
            return Err(());
        }

        let w = self.geom.width;
        let guard = EDGE_GUARD * (q.x.abs() + q.y.abs());
        let guess = (rough_atan2(q.y, q.x) + PI) * self.inv_phi_step + 0.5;
        let mut col = if guess >= 0.0 { guess as usize % w } else { w - 1 };
        for _ in 0..3 {
            let (lc, ls) = self.col_edges[col];
            let (hc, hs) = self.col_edges[col + 1];
            let lo = lc * q.y - ls * q.x;
            let hi = hc * q.y - hs * q.x;
            if lo.abs() <= guard || hi.abs() <= guard {
                return Err(());
            }
            if lo < 0.0 {
                col = (col + w - 1) % w;
            } else if hi > 0.0 {
                col = (col + 1) % w;
            } else {
                return Ok(Some(row * w + col));
            }
        }
        Err(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geom_512() -> ImageGeometry {
        ImageGeometry::default()
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn axis_aligned_pixels_lift_to_axes() {
        let g = geom_512();
        let mut img = RangeImage::invalid(g);
        let fwd = g.angles_to_pixel(0.0, 0.0).unwrap();
        let left = g.angles_to_pixel(FRAC_PI_2, 0.0).unwrap();
        img.set(fwd, 5.0, 0.0).unwrap();
        img.set(left, 2.0, 0.0).unwrap();
        let p = pixel_to_point(&img, fwd).unwrap().unwrap();
        assert_abs_diff_eq!(p, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        let p = pixel_to_point(&img, left).unwrap().unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn oblique_pixel_lifts_to_expected_point() {
        // 8 rows over ±π/3 put a pixel center at θ = π/6; 512 cols put one at π/4.
        let g = ImageGeometry::new(512, 8, -PI / 3.0, PI / 3.0).unwrap();
        let px = g.angles_to_pixel(FRAC_PI_4, PI / 6.0).unwrap();
        let (phi, theta) = g.pixel_angles(px);
        assert_abs_diff_eq!(phi, FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(theta, PI / 6.0, epsilon = 1e-12);
        let mut img = RangeImage::invalid(g);
        img.set(px, 1.0, 0.0).unwrap();
        let p = pixel_to_point(&img, px).unwrap().unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.612_372_4, 0.612_372_4, 0.5), epsilon = 1e-7);
    }

    #[test]
    fn invalid_and_out_of_bounds_pixels() {
        let img = RangeImage::invalid(geom_512());
        assert_eq!(pixel_to_point(&img, Pixel::new(3, 3)).unwrap(), None);
        assert!(matches!(
            pixel_to_point(&img, Pixel::new(512, 0)),
            Err(AvoidError::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn point_to_angles_examples() {
        let (phi, theta) = point_to_angles(&Vector3::new(1.0, 1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(phi, FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(theta, 0.0, epsilon = 1e-12);
        assert_eq!(point_to_angles(&Vector3::new(0.0, 0.0, 3.0)).unwrap(), (0.0, FRAC_PI_2));
        let (phi, theta) = point_to_angles(&Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(phi, 0.0);
        assert_abs_diff_eq!(theta, FRAC_PI_4, epsilon = 1e-12);
        assert_eq!(point_to_angles(&Vector3::zeros()), Err(AvoidError::ZeroVector));
        // atan2 returns +π on the negative x axis; we report -π
        let (phi, _) = point_to_angles(&Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!(phi, -PI);
    }

    #[test]
    fn angles_to_pixel_examples() {
        let g = geom_512();
        assert_eq!(g.angles_to_pixel(0.0, 0.0), Some(Pixel::new(256, 64)));
        assert_eq!(g.angles_to_pixel(-PI, g.theta_min), Some(Pixel::new(0, 0)));
        assert_eq!(g.angles_to_pixel(0.0, g.theta_max + 0.1), None);
        assert_eq!(g.angles_to_pixel(0.0, g.theta_min - 0.1), None);
        // θ_max itself is inside the FoV and lands in the top row
        assert_eq!(g.angles_to_pixel(0.0, g.theta_max), Some(Pixel::new(256, 127)));
        // azimuth wraps
        assert_eq!(g.angles_to_pixel(PI - 1e-6, 0.0).unwrap().col, 0);
        assert_eq!(g.angles_to_pixel(3.0 * PI, 0.0).unwrap().col, 0);
    }

    #[test]
    fn geometry_validation() {
        assert!(ImageGeometry::new(3, 8, -0.5, 0.5).is_err());
        assert!(ImageGeometry::new(8, 1, -0.5, 0.5).is_err());
        assert!(ImageGeometry::new(8, 8, 0.5, -0.5).is_err());
        assert!(ImageGeometry::new(8, 8, -2.0, 2.0).is_err());
        assert!(ImageGeometry::new(8, 8, -0.5, 0.5).is_ok());
    }

    #[test]
    fn identity_warp_keeps_image() {
        let g = geom_512();
        let mut img = RangeImage::invalid(g);
        for row in 0..g.height {
            for col in (0..g.width).step_by(3) {
                img.set(Pixel::new(col, row), 2.0 + (col + row) as f64 * 0.01, 0.1)
                    .unwrap();
            }
        }
        let out = warp(&img, &RigidMotion::identity());
        let same = img
            .valid()
            .filter(|(i, r, _)| (out.ranges()[*i] - r).abs() < 1e-9)
            .count();
        assert!(same as f64 >= 0.99 * img.valid_count() as f64);
    }

    #[test]
    fn translation_warp_moves_return() {
        let g = geom_512();
        let px = g.angles_to_pixel(0.0, 0.0).unwrap();
        let mut img = RangeImage::invalid(g);
        img.set(px, 5.0, 0.3).unwrap();

        let back = warp(&img, &RigidMotion::from_translation(Vector3::new(-1.0, 0.0, 0.0)));
        assert_abs_diff_eq!(back.range(px).unwrap().unwrap(), 6.0, epsilon = 1e-12);
        assert_eq!(back.age(px).unwrap(), 0.3);
        assert_eq!(back.valid_count(), 1);

        let close = warp(&img, &RigidMotion::from_translation(Vector3::new(4.999, 0.0, 0.0)));
        assert_abs_diff_eq!(close.range(px).unwrap().unwrap(), 0.001, epsilon = 1e-9);
    }

    #[test]
    fn warp_collision_keeps_minimum() {
        // two returns on the same ray from a point behind the sensor
        let g = geom_512();
        let mut img = RangeImage::invalid(g);
        let a = g.angles_to_pixel(0.0, 0.0).unwrap();
        img.set(a, 3.0, 0.5).unwrap();
        let b = Pixel::new(a.col + 1, a.row);
        img.set(b, 30.0, 0.1).unwrap();
        // large backward move collapses both onto the forward pixel
        let out = warp(&img, &RigidMotion::from_translation(Vector3::new(-500.0, 0.0, 0.0)));
        assert_eq!(out.valid_count(), 1);
        let (_, r, age) = out.valid().next().unwrap();
        assert_abs_diff_eq!(r, 503.0, epsilon = 1e-9);
        assert_eq!(age, 0.5);
    }

    #[test]
    fn rigid_motion_inverse_composes_to_identity() {
        let m = RigidMotion::new(
            Vector3::new(1.0, -2.0, 0.5),
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.7),
        );
        let id = m.then(&m.inverse());
        assert!(id.translation.norm() < 1e-9);
        assert!(id.rotation.angle() < 1e-9);
        assert!((m.rotation.to_rotation_matrix().matrix().determinant() - 1.0).abs() < 1e-9);
    }

    fn small_geom() -> impl Strategy<Value = ImageGeometry> {
        (4usize..700, 2usize..200, -1.5f64..0.0, 0.05f64..1.5).prop_map(|(w, h, lo, hi)| {
            ImageGeometry::new(w, h, lo, hi.min(lo + PI)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn pixel_centers_round_trip(
            g in small_geom(),
            cf in 0.0f64..1.0,
            rf in 0.0f64..1.0,
            r in 0.01f64..200.0,
        ) {
            let px = Pixel::new(((g.width as f64 * cf) as usize).min(g.width - 1),
                                ((g.height as f64 * rf) as usize).min(g.height - 1));
            let mut img = RangeImage::invalid(g);
            img.set(px, r, 0.0).unwrap();
            let p = pixel_to_point(&img, px).unwrap().unwrap();
            let (phi, theta) = point_to_angles(&p).unwrap();
            let (phi_c, theta_c) = g.pixel_angles(px);
            prop_assert!(wrap_angle(phi - phi_c).abs() < 1e-9);
            prop_assert!((theta - theta_c).abs() < 1e-9);
            prop_assert_eq!(g.angles_to_pixel(phi, theta), Some(px));
        }

        #[test]
        fn warp_preserves_minimum(
            t in prop::array::uniform3(-2.0f64..2.0),
            seed in 0u64..1000,
        ) {
            let g = ImageGeometry::new(64, 16, -0.6, 0.6).unwrap();
            let mut img = RangeImage::invalid(g);
            let mut s = seed;
            for i in 0..g.len() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if s >> 62 == 0 {
                    img.set_index(i, 1.0 + (s >> 40) as f64 / (1u64 << 24) as f64 * 20.0, 0.0);
                }
            }
            let t = Vector3::from(t);
            let out = warp(&img, &RigidMotion::from_translation(t));
            if let (Some(before), Some(after)) = (img.min_range(), out.min_range()) {
                prop_assert!(after >= before - t.norm() - 1e-6);
            }
        }

        #[test]
        fn warp_there_and_back(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -0.2f64..0.2,
            t in prop::array::uniform3(-0.05f64..0.05),
        ) {
            // Rotations preserve ranges exactly, so the round trip may only move
            // a return by one pixel. Translations re-lift returns along quantized
            // pixel centers, which bends the range by at most |t|·(Δφ + Δθ).
            let g = ImageGeometry::new(128, 32, -0.6, 0.6).unwrap();
            let img = RangeImage::from_ranges(g, vec![10.0; g.len()]).unwrap();
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let rot = RigidMotion::new(
                Vector3::zeros(),
                UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle),
            );
            let trans = RigidMotion::from_translation(Vector3::from(t));
            let trans_tol = Vector3::from(t).norm() * (g.phi_step() + g.theta_step()) + 1e-9;
            for (m, tol) in [(rot, 1e-6), (trans, trans_tol)] {
                let round = warp(&warp(&img, &m), &m.inverse());
                let (mut matched, mut considered) = (0usize, 0usize);
                let inv = m.inverse();
                for (i, r, _) in img.valid() {
                    let px = g.pixel_at(i);
                    // returns rotated out of the field of view are gone for good
                    let moved = inv.transform_point(&pixel_to_point(&img, px).unwrap().unwrap());
                    let (_, theta) = point_to_angles(&moved).unwrap();
                    if theta < g.theta_min + g.theta_step() || theta > g.theta_max - g.theta_step() {
                        continue;
                    }
                    considered += 1;
                    let mut ok = false;
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let row = px.row as i64 + dr;
                            if row < 0 || row >= g.height as i64 {
                                continue;
                            }
                            let col = (px.col as i64 + dc).rem_euclid(g.width as i64) as usize;
                            let rr = round.ranges()[g.index(Pixel::new(col, row as usize))];
                            ok |= is_valid_range(rr) && (rr - r).abs() <= tol;
                        }
                    }
                    matched += ok as usize;
                }
                prop_assert!(matched as f64 >= 0.99 * considered as f64,
                    "matched {} of {}", matched, considered);
            }
        }
    }

    fn edge_points(g: &ImageGeometry) -> Vec<Vector3<f64>> {
        // directions sitting on, or a few ulps off, every bin edge
        let mut pts = Vec::new();
        let eps = [0.0, 1e-15, -1e-15, 1e-13, -1e-13, 1e-9, -1e-9];
        for c in (0..=g.width).step_by(7) {
            let b = -PI + (c as f64 - 0.5) * g.phi_step();
            for e in eps {
                pts.push(unit_from_angles(b + e, 0.1));
            }
        }
        for k in 0..=g.height {
            let b = g.theta_min + (k as f64 - 0.5) * g.theta_step();
            for e in eps {
                pts.push(unit_from_angles(0.3, b + e) * 7.5);
            }
        }
        for e in eps {
            pts.push(unit_from_angles(1.0, g.theta_min - FOV_EPS + e));
            pts.push(unit_from_angles(-2.0, g.theta_max + FOV_EPS + e));
        }
        pts.push(Vector3::new(0.0, 0.0, 1.0));
        pts.push(Vector3::new(0.0, 0.0, -3.0));
        pts.push(Vector3::new(-1.0, 0.0, 0.0));
        pts.push(Vector3::new(-1.0, -0.0, 0.2));
        pts.push(Vector3::new(-1.0, -1e-300, 0.2));
        pts
    }

    #[test]
    fn projector_agrees_on_edges() {
        for g in [geom_512(), ImageGeometry::new(8, 4, -0.3, 0.5).unwrap()] {
            let proj = Projector::new(&g);
            for q in edge_points(&g) {
                let n = q.norm();
                assert_eq!(proj.index(&q, n), project_index(&g, &q, n), "{q:?}");
            }
            let table = g.direction_table();
            for i in 0..g.len() {
                let px = g.pixel_at(i);
                let q = table.unit(px.col, px.row) * 3.0;
                assert_eq!(proj.index(&q, q.norm()), Some(i));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn projector_matches_exact_projection(
            x in -50.0f64..50.0, y in -50.0f64..50.0, z in -50.0f64..50.0,
        ) {
            let g = geom_512();
            let q = Vector3::new(x, y, z);
            let n = q.norm();
            prop_assert_eq!(Projector::new(&g).index(&q, n), project_index(&g, &q, n));
        }
    }
}
