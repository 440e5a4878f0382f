//! Per-scan controller: history update, direction, speed scaling.

use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::angular_field::DirectionResult;
use crate::baseline_pf::{sphere_pf_command, SpherePfParams};
use crate::params::{AvoidanceParams, SupportMetric};
use crate::predictor::{scale_by_projection, scale_command, unroll, PredictionTrace};
use crate::push_blend::RegimeDecision;
use crate::range_image::{RangeImage, RigidMotion};
use crate::scan_history::{prune_scan, HistoryState};
use crate::steering::steer;
use crate::{AvoidError, Result, VelocityCommand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Velocity-dependent support radius with predicted time-to-contact.
    #[default]
    Angular,
    /// Euclidean support radius with predicted time-to-contact.
    AngularNoVel,
    /// Velocity-dependent support radius, time-to-contact from projecting
    /// the command onto obstacle directions.
    AngularNoPred,
    /// Two-sphere Cartesian potential field.
    SpherePf,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Angular,
        Method::AngularNoVel,
        Method::AngularNoPred,
        Method::SpherePf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Angular => "angular",
            Method::AngularNoVel => "angular_no_vel",
            Method::AngularNoPred => "angular_no_pred",
            Method::SpherePf => "sphere_pf",
        }
    }
}

impl FromStr for Method {
    type Err = AvoidError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| AvoidError::InvalidParams(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    /// Command to send to the flight controller.
    pub command: VelocityCommand,
    /// Direction-adjusted command before speed scaling.
    pub unscaled: VelocityCommand,
    pub regime: RegimeDecision,
    /// Target handed to the angular field, after clamping and blending.
    pub field_target: VelocityCommand,
    pub direction: Option<DirectionResult>,
    pub trace: Option<PredictionTrace>,
    /// `‖command‖ / ‖unscaled‖`, 1 for a zero unscaled command.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Avoider {
    params: AvoidanceParams,
    method: Method,
    v_max: f64,
    pf: SpherePfParams,
    history: Option<HistoryState>,
    prev_cmd: VelocityCommand,
}

impl Avoider {
    /// `v_max` caps the target speed and sizes the baseline's passive sphere.
    pub fn new(mut params: AvoidanceParams, method: Method, v_max: f64) -> Result<Self> {
        if method == Method::AngularNoVel {
            params.support_metric = SupportMetric::Euclidean;
        }
        params.validate()?;
        let pf = SpherePfParams::from_avoidance(&params, v_max)?;
        Ok(Self {
            params,
            method,
            v_max,
            pf,
            history: None,
            prev_cmd: Vector3::zeros(),
        })
    }

    pub fn params(&self) -> &AvoidanceParams {
        &self.params
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn history(&self) -> Option<&RangeImage> {
        self.history.as_ref().map(|h| &h.history)
    }

    pub fn reset(&mut self) {
        self.history = None;
        self.prev_cmd = Vector3::zeros();
    }

    /// Processes one scan.
    ///
    /// `motion` is the sensor motion since the previous tick (ignored on
    /// the first one); `v_current` is the measured velocity in the current
    /// sensor frame.
    pub fn tick(
        &mut self,
        scan: &RangeImage,
        motion: &RigidMotion,
        v_current: Vector3<f64>,
        v_target: VelocityCommand,
        now: f64,
    ) -> Result<TickOutput> {
        let p = &self.params;
        if *scan.geometry() != p.geometry {
            return Err(AvoidError::GeometryMismatch);
        }
        let pruned = prune_scan(scan, &v_current, p);
        let history = match &self.history {
            Some(h) => h.aggregate(&pruned, motion, now, p)?,
            None => HistoryState::empty(p.geometry, now).aggregate(&pruned, &RigidMotion::identity(), now, p)?,
        };
        let image = &history.history;

        let target = clamp_speed(v_target, self.v_max);
        let out = if self.method == Method::SpherePf {
            let command = sphere_pf_command(image, &target, &self.pf);
            TickOutput {
                command,
                unscaled: command,
                regime: RegimeDecision::from_image(image, p),
                field_target: target,
                direction: None,
                trace: None,
                scale: 1.0,
            }
        } else {
            let s = steer(image, &target, &v_current, Some(&self.prev_cmd), p);
            let (command, trace) = if self.method == Method::AngularNoPred {
                (scale_by_projection(image, &s.command, p), None)
            } else {
                let trace = unroll(image, &s.command, &v_current, p);
                (scale_command(&trace, &s.command, p), Some(trace))
            };
            let unscaled_speed = s.command.norm();
            TickOutput {
                command,
                unscaled: s.command,
                regime: s.regime,
                field_target: s.field_target,
                direction: s.direction,
                trace,
                scale: if unscaled_speed > 0.0 {
                    command.norm() / unscaled_speed
                } else {
                    1.0
                },
            }
        };

        self.history = Some(history);
        self.prev_cmd = out.command;
        Ok(out)
    }
}

fn clamp_speed(v: VelocityCommand, v_max: f64) -> VelocityCommand {
    let n = v.norm();
    if n > v_max {
        v * (v_max / n)
    } else {
        v
    }
}
