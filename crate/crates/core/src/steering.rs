//! One pass of the direction pipeline on a single range image: regime
//! selection, push/blend, angular field, acceleration limit.

use crate::angular_field::{adjust_direction, adjust_direction_over, DirectionResult};
use crate::params::AvoidanceParams;
use crate::push_blend::{blend, compute_push, limit_acceleration, PushForce, Regime, RegimeDecision};
use crate::range_image::{DirectionTable, ImageGeometry, RangeImage};
use crate::VelocityCommand;

/// Below this speed a target has no usable direction.
const MIN_TARGET_SPEED: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steering {
    /// Unscaled command: the adjusted direction at the (blended) target speed.
    pub command: VelocityCommand,
    pub regime: RegimeDecision,
    pub push: PushForce,
    /// Target handed to the angular field after blending.
    pub field_target: VelocityCommand,
    /// `None` in the override regime or for a zero target.
    pub direction: Option<DirectionResult>,
}

pub fn steer(
    image: &RangeImage,
    v_target: &VelocityCommand,
    v_current: &VelocityCommand,
    prev_cmd: Option<&VelocityCommand>,
    params: &AvoidanceParams,
) -> Steering {
    let regime = RegimeDecision::from_image(image, params);
    let push = match regime.regime {
        Regime::Free => PushForce::default(),
        _ => compute_push(image, params),
    };
    let field_target = blend(v_target, &push, &regime);

    let (mut command, direction) = if regime.regime == Regime::Override {
        (push.vector, None)
    } else {
        let speed = field_target.norm();
        if speed < MIN_TARGET_SPEED {
            (VelocityCommand::zeros(), None)
        } else {
            match adjust_direction(image, &field_target, v_current, params) {
                Ok(dir) => (dir.direction * speed, Some(dir)),
                Err(_) => (VelocityCommand::zeros(), None),
            }
        }
    };

    if let Some(prev) = prev_cmd {
        command = limit_acceleration(prev, &command, regime.d_near, params);
    }

    Steering {
        command,
        regime,
        push,
        field_target,
        direction,
    }
}

/// Command of [`steer`] when nothing lies within `d_safe`: the angular field
/// alone on the target, with no push and no acceleration limit.
pub(crate) fn steer_free(
    geom: &ImageGeometry,
    table: &DirectionTable,
    pixels: impl Iterator<Item = (usize, f64)>,
    v_target: &VelocityCommand,
    v_current: &VelocityCommand,
    params: &AvoidanceParams,
) -> VelocityCommand {
    let speed = v_target.norm();
    if speed < MIN_TARGET_SPEED {
        return VelocityCommand::zeros();
    }
    match adjust_direction_over(geom, table, pixels, v_target, v_current, params) {
        Ok(dir) => dir.direction * speed,
        Err(_) => VelocityCommand::zeros(),
    }
}
