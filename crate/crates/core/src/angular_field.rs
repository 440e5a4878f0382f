//! Direction selection with repulsive forces defined on image angles.
//!
//! Each obstacle pixel repels the target pixel inside its support radius,
//! the angular footprint of the `d_safe` sphere around the return. The summed
//! force is clipped per axis to the range spanned by the individual forces,
//! so many pixels of one wall push no harder than the strongest of them
//! while opposing forces still cancel. Only the direction changes; speed is
//! decided later by the predictor.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

use crate::params::{AvoidanceParams, SupportMetric};
use crate::range_image::{point_to_angles, unit_from_angles, wrap_angle, DirectionTable, ImageGeometry, RangeImage};
use crate::{AvoidError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngularForce {
    pub d_phi: f64,
    pub d_theta: f64,
}

impl AngularForce {
    pub const ZERO: AngularForce = AngularForce {
        d_phi: 0.0,
        d_theta: 0.0,
    };

    pub fn new(d_phi: f64, d_theta: f64) -> Self {
        Self { d_phi, d_theta }
    }

    pub fn norm(&self) -> f64 {
        self.d_phi.hypot(self.d_theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionResult {
    /// Unit vector in the body frame.
    pub direction: Vector3<f64>,
    /// Clipped angular offset added to the target angles.
    pub offset: AngularForce,
    /// Elevation had to be clamped into the vertical field of view.
    pub fov_clipped: bool,
    /// Number of pixels whose support covered the target.
    pub contributors: usize,
}

/// Support radius with the obstacle virtually moved closer by the predicted
/// approach distance. `v_toward` is the velocity component toward the
/// obstacle and may be negative.
pub fn support_radius(r: f64, v_toward: f64, params: &AvoidanceParams) -> Result<f64> {
    if !(r > 0.0) {
        return Err(AvoidError::NonPositiveRange(r));
    }
    let d_contact = (params.t_contact * v_toward).max(params.d_min_contact);
    let r_vel = r - d_contact;
    Ok(if r_vel >= params.d_safe {
        0.0
    } else if r_vel > 0.0 {
        params.d_safe.atan2(r_vel)
    } else {
        FRAC_PI_2
    })
}

/// Support radius from the plain range: the angular radius of the `d_safe`
/// sphere seen from `r` away, with no far-field cutoff.
pub fn euclidean_support_radius(r: f64, params: &AvoidanceParams) -> Result<f64> {
    if !(r > 0.0) {
        return Err(AvoidError::NonPositiveRange(r));
    }
    Ok(params.d_safe.atan2(r))
}

/// Range beyond which no pixel has support for a vehicle moving at
/// `speed`. Infinite for the Euclidean metric.
pub fn support_cutoff(speed: f64, params: &AvoidanceParams) -> f64 {
    match params.support_metric {
        SupportMetric::VelocityDependent => params.d_safe + (params.t_contact * speed).max(params.d_min_contact),
        SupportMetric::Euclidean => f64::INFINITY,
    }
}

#[inline]
fn support_for(r: f64, v_toward: f64, params: &AvoidanceParams) -> f64 {
    // r comes from a valid pixel, so it is positive
    match params.support_metric {
        SupportMetric::VelocityDependent => {
            support_radius(r, v_toward, params).unwrap_or(FRAC_PI_2)
        }
        SupportMetric::Euclidean => euclidean_support_radius(r, params).unwrap_or(FRAC_PI_2),
    }
}

/// `to - from` in image angles, azimuth along the shorter arc. An azimuth
/// gap of exactly π counts as +π.
#[inline]
pub fn angular_difference(from: (f64, f64), to: (f64, f64)) -> (f64, f64) {
    let mut d_phi = wrap_angle(to.0 - from.0);
    if d_phi == -PI {
        d_phi = PI;
    }
    (d_phi, to.1 - from.1)
}

/// Force of an obstacle at `p_obs` on the pixel `p_prime`, or `None` when
/// `p_prime` lies outside the support.
///
/// A pixel sitting exactly on the target pushes straight up with magnitude
/// `d_support`.
#[inline]
pub fn contributing_force(
    p_obs: (f64, f64),
    p_prime: (f64, f64),
    d_support: f64,
) -> Option<AngularForce> {
    if !(d_support > 0.0) {
        return None;
    }
    let (d_phi, d_theta) = angular_difference(p_obs, p_prime);
    let d = (d_phi * d_phi + d_theta * d_theta).sqrt();
    if d > d_support {
        return None;
    }
    if d == 0.0 {
        return Some(AngularForce::new(0.0, d_support));
    }
    let k = (d_support - d) / d;
    Some(AngularForce::new(k * d_phi, k * d_theta))
}

pub fn repulsive_force(p_obs: (f64, f64), p_prime: (f64, f64), d_support: f64) -> AngularForce {
    contributing_force(p_obs, p_prime, d_support).unwrap_or(AngularForce::ZERO)
}

/// Running sum with per-axis extremes of the individual forces.
#[derive(Debug, Clone, Copy)]
pub struct ForceAccumulator {
    sum: AngularForce,
    min: AngularForce,
    max: AngularForce,
    count: usize,
}

impl Default for ForceAccumulator {
    fn default() -> Self {
        Self {
            sum: AngularForce::ZERO,
            min: AngularForce::new(f64::INFINITY, f64::INFINITY),
            max: AngularForce::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            count: 0,
        }
    }
}

impl ForceAccumulator {
    #[inline]
    pub fn push(&mut self, f: AngularForce) {
        self.sum.d_phi += f.d_phi;
        self.sum.d_theta += f.d_theta;
        self.min.d_phi = self.min.d_phi.min(f.d_phi);
        self.min.d_theta = self.min.d_theta.min(f.d_theta);
        self.max.d_phi = self.max.d_phi.max(f.d_phi);
        self.max.d_theta = self.max.d_theta.max(f.d_theta);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> AngularForce {
        self.sum
    }

    /// Sum clipped into `[min, max]` per axis; zero without contributors.
    pub fn clipped(&self) -> AngularForce {
        if self.count == 0 {
            return AngularForce::ZERO;
        }
        AngularForce::new(
            self.sum.d_phi.max(self.min.d_phi).min(self.max.d_phi),
            self.sum.d_theta.max(self.min.d_theta).min(self.max.d_theta),
        )
    }
}

pub fn clip_forces(forces: &[AngularForce]) -> AngularForce {
    let mut acc = ForceAccumulator::default();
    forces.iter().for_each(|f| acc.push(*f));
    acc.clipped()
}

/// Deflects the target direction away from obstacles in `history`.
pub fn adjust_direction(
    history: &RangeImage,
    v_target: &Vector3<f64>,
    v_current: &Vector3<f64>,
    params: &AvoidanceParams,
) -> Result<DirectionResult> {
    let geom = *history.geometry();
    let table = geom.direction_table();
    let pixels = history.valid().map(|(i, r, _)| (i, r));
    adjust_direction_over(&geom, &table, pixels, v_target, v_current, params)
}

/// [`adjust_direction`] over an explicit list of `(pixel index, range)`
/// pairs in ascending index order.
pub(crate) fn adjust_direction_over(
    geom: &ImageGeometry,
    table: &DirectionTable,
    pixels: impl Iterator<Item = (usize, f64)>,
    v_target: &Vector3<f64>,
    v_current: &Vector3<f64>,
    params: &AvoidanceParams,
) -> Result<DirectionResult> {
    let target = point_to_angles(v_target)?;
    let cutoff = support_cutoff(v_current.norm(), params);
    let mut acc = ForceAccumulator::default();
    for (i, r) in pixels {
        if r >= cutoff {
            continue;
        }
        let px = geom.pixel_at(i);
        let v_toward = table.unit(px.col, px.row).dot(v_current);
        let d_support = support_for(r, v_toward, params);
        if d_support == 0.0 {
            continue;
        }
        if let Some(f) = contributing_force(geom.pixel_angles(px), target, d_support) {
            acc.push(f);
        }
    }

    let offset = acc.clipped();
    let phi = wrap_angle(target.0 + offset.d_phi);
    let raw_theta = target.1 + offset.d_theta;
    let theta = raw_theta.clamp(geom.theta_min, geom.theta_max);
    Ok(DirectionResult {
        direction: unit_from_angles(phi, theta),
        offset,
        fov_clipped: theta != raw_theta,
        contributors: acc.count(),
    })
}
