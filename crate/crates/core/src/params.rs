//! Parameter ledger shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::range_image::ImageGeometry;
use crate::{AvoidError, Result};

/// How the angular support radius of an obstacle pixel is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupportMetric {
    /// Range shortened by the predicted approach distance (`r - d_contact`),
    /// with far obstacles discarded.
    #[default]
    VelocityDependent,
    /// Plain Euclidean range: `atan2(d_safe, r)` for every obstacle.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvoidanceParams {
    /// Safety distance kept to every obstacle (m).
    pub d_safe: f64,
    /// Inside this distance the target command is discarded (m).
    pub d_close: f64,
    /// Acceleration the low-level controller applies per axis (m/s²).
    pub a_max: f64,
    /// Minimum allowed time-to-contact, also the prediction horizon (s).
    pub t_contact: f64,
    /// Lower bound on the virtual approach distance (m).
    pub d_min_contact: f64,
    /// Lifetime of history pixels (s).
    pub t_history: f64,
    /// Growth constant of the history replacement threshold (s).
    pub tau: f64,
    /// Speed of the push force near obstacles (m/s).
    pub v_push: f64,
    /// Max change between consecutive commands inside `d_safe` (m/s per tick).
    pub accel_limit_near_close: f64,
    /// Control and prediction period (s).
    pub dt: f64,
    pub support_metric: SupportMetric,
    pub geometry: ImageGeometry,
}

impl Default for AvoidanceParams {
    fn default() -> Self {
        let t_history = 1.0;
        Self {
            d_safe: 1.5,
            d_close: 1.0,
            a_max: 2.0,
            t_contact: 1.5,
            d_min_contact: 2.0,
            t_history,
            // threshold doubles over the history window
            tau: t_history / std::f64::consts::LN_2,
            v_push: 0.5,
            accel_limit_near_close: 0.25,
            dt: 0.05,
            support_metric: SupportMetric::VelocityDependent,
            geometry: ImageGeometry::default(),
        }
    }
}

impl AvoidanceParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(AvoidError::InvalidParams(msg.to_string()));
        let all_finite = [
            self.d_safe,
            self.d_close,
            self.a_max,
            self.t_contact,
            self.d_min_contact,
            self.t_history,
            self.tau,
            self.v_push,
            self.accel_limit_near_close,
            self.dt,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return fail("all parameters must be finite");
        }
        if !(0.0 < self.d_close && self.d_close < self.d_safe) {
            return fail("need 0 < d_close < d_safe");
        }
        if self.a_max <= 0.0 {
            return fail("a_max must be positive");
        }
        if self.t_contact <= 0.0 {
            return fail("t_contact must be positive");
        }
        if self.dt <= 0.0 {
            return fail("dt must be positive");
        }
        if self.d_min_contact <= 0.0 {
            return fail("d_min_contact must be positive");
        }
        if self.t_history < 0.0 {
            return fail("t_history must be non-negative");
        }
        if self.tau <= 0.0 {
            return fail("tau must be positive");
        }
        if self.v_push < 0.0 || self.accel_limit_near_close < 0.0 {
            return fail("v_push and accel_limit_near_close must be non-negative");
        }
        self.geometry.validate()
    }

    /// Number of prediction steps needed to cover the horizon.
    pub fn horizon_steps(&self) -> usize {
        (self.t_contact / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}
