//! Cartesian potential field with a passive and an active avoidance sphere.
//!
//! Inside the passive sphere the velocity component toward each obstacle is
//! attenuated linearly, reaching full cancellation at the active sphere.
//! Inside the active sphere the vehicle is additionally pushed away.

use serde::{Deserialize, Serialize};

use crate::params::AvoidanceParams;
use crate::push_blend::repulsion_within;
use crate::range_image::RangeImage;
use crate::{AvoidError, Result, VelocityCommand};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePfParams {
    pub d_passive: f64,
    pub d_active: f64,
    pub v_max: f64,
    /// Speed of the active-sphere repulsion.
    pub v_push: f64,
}

impl SpherePfParams {
    /// Passive radius sized so the vehicle can stop from `v_max` within
    /// `t_contact`.
    pub fn from_avoidance(params: &AvoidanceParams, v_max: f64) -> Result<Self> {
        let p = Self {
            d_passive: params.d_safe + v_max * params.t_contact,
            d_active: params.d_safe,
            v_max,
            v_push: params.v_push,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_active > 0.0 && self.d_active < self.d_passive) {
            return Err(AvoidError::InvalidParams(format!(
                "need 0 < d_active < d_passive, got {} and {}",
                self.d_active, self.d_passive
            )));
        }
        if !(self.v_max > 0.0) {
            return Err(AvoidError::InvalidParams(format!("v_max must be positive, got {}", self.v_max)));
        }
        Ok(())
    }

    /// Fraction of the approach speed removed at range `r`.
    pub fn attenuation(&self, r: f64) -> f64 {
        ((self.d_passive - r) / (self.d_passive - self.d_active)).clamp(0.0, 1.0)
    }
}

pub fn sphere_pf_command(history: &RangeImage, v_target: &VelocityCommand, params: &SpherePfParams) -> VelocityCommand {
    let geom = history.geometry();
    let table = geom.direction_table();

    let mut near: Vec<(f64, usize)> = history
        .valid()
        .filter(|&(_, r, _)| r < params.d_passive)
        .map(|(i, r, _)| (r, i))
        .collect();
    if near.is_empty() {
        return clamp_speed(*v_target, params.v_max);
    }
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut v = *v_target;
    for &(r, i) in &near {
        let px = geom.pixel_at(i);
        let n = table.unit(px.col, px.row);
        let cap = (1.0 - params.attenuation(r)) * v_target.dot(&n).max(0.0);
        let toward = v.dot(&n);
        if toward > cap {
            v -= n * (toward - cap);
        }
    }

    v += repulsion_within(history, params.d_active, params.v_push);
    clamp_speed(v, params.v_max)
}

fn clamp_speed(v: VelocityCommand, v_max: f64) -> VelocityCommand {
    let n = v.norm();
    if n > v_max {
        v * (v_max / n)
    } else {
        v
    }
}
