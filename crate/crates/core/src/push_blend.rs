//! Cartesian push force for the near-obstacle regime, blended with the
//! target command between `d_close` and `d_safe`.

use nalgebra::Vector3;

use crate::params::AvoidanceParams;
use crate::range_image::RangeImage;
use crate::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Nothing within `d_safe`; angular field only.
    Free,
    /// Closest obstacle between `d_close` and `d_safe`.
    Blend,
    /// Closest obstacle within `d_close`; the target is discarded.
    Override,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Free => "FREE",
            Regime::Blend => "BLEND",
            Regime::Override => "OVERRIDE",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeDecision {
    pub regime: Regime,
    /// Closest valid return, `+∞` when there is none.
    pub d_near: f64,
}

impl RegimeDecision {
    pub fn classify(d_near: f64, params: &AvoidanceParams) -> Self {
        let regime = if d_near >= params.d_safe {
            Regime::Free
        } else if d_near > params.d_close {
            Regime::Blend
        } else {
            Regime::Override
        };
        Self { regime, d_near }
    }

    pub fn from_image(img: &RangeImage, params: &AvoidanceParams) -> Self {
        Self::classify(img.nearest_distance(), params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PushForce {
    pub vector: Vector3<f64>,
}

impl PushForce {
    pub fn is_zero(&self) -> bool {
        self.vector == Vector3::zeros()
    }
}

/// Sum of linearly weighted repulsions from returns closer than `radius`,
/// rescaled to `speed`. Zero when nothing is that close or the forces cancel.
pub fn repulsion_within(img: &RangeImage, radius: f64, speed: f64) -> Vector3<f64> {
    let geom = img.geometry();
    let table = geom.direction_table();
    let mut sum = Vector3::zeros();
    for (i, r, _) in img.valid() {
        if r >= radius {
            continue;
        }
        let px = geom.pixel_at(i);
        sum -= table.unit(px.col, px.row) * ((radius - r) / radius);
    }
    let n = sum.norm();
    if n < 1e-12 {
        Vector3::zeros()
    } else {
        sum * (speed / n)
    }
}

pub fn compute_push(history: &RangeImage, params: &AvoidanceParams) -> PushForce {
    PushForce {
        vector: repulsion_within(history, params.d_safe, params.v_push),
    }
}

/// Combines the target with the push force according to the regime.
///
/// In the blend regime the part of the target along the push direction is
/// replaced by the push force itself, so the result never speeds up when
/// target and push align.
pub fn blend(v_target: &VelocityCommand, push: &PushForce, regime: &RegimeDecision) -> VelocityCommand {
    match regime.regime {
        Regime::Free => *v_target,
        Regime::Override => push.vector,
        Regime::Blend => {
            let n = push.vector.norm();
            if n == 0.0 {
                return *v_target;
            }
            let dir = push.vector / n;
            v_target + push.vector - dir * v_target.dot(&dir)
        }
    }
}

/// Caps the change between consecutive commands while inside `d_safe`.
pub fn limit_acceleration(
    prev_cmd: &VelocityCommand,
    new_cmd: &VelocityCommand,
    d_near: f64,
    params: &AvoidanceParams,
) -> VelocityCommand {
    if d_near >= params.d_safe {
        return *new_cmd;
    }
    let delta = new_cmd - prev_cmd;
    let n = delta.norm();
    if n <= params.accel_limit_near_close {
        *new_cmd
    } else {
        prev_cmd + delta * (params.accel_limit_near_close / n)
    }
}
