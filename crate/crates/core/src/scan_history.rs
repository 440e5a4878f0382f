//! Region-of-interest pruning and aggregation of scans into the history
//! range image.
//!
//! The history keeps every return for at most `t_history` seconds. A fresh
//! scan replaces a history pixel when the history range, inflated by an
//! age-dependent factor `exp(age / τ)`, exceeds the scan range. Young
//! history therefore wins against farther scan returns (thin structures
//! survive dropouts) while old history yields to the current measurement.

use nalgebra::Vector3;

use crate::params::AvoidanceParams;
use crate::range_image::{is_valid_range, warp, RangeImage, RigidMotion, INVALID_RANGE};
use crate::{AvoidError, Result};

/// Accumulated float error tolerated before a pixel counts as expired.
const AGE_EPS: f64 = 1e-9;

/// Ball around the current position that bounds every position reachable
/// under `±a_max` within `t_history + t_contact`, grown by `d_safe`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiEnvelope {
    pub reachable_radius: f64,
    pub margin: f64,
}

impl RoiEnvelope {
    pub fn for_velocity(v0: &Vector3<f64>, params: &AvoidanceParams) -> Self {
        let t = params.t_history + params.t_contact;
        Self {
            reachable_radius: v0.norm() * t + 0.5 * params.a_max * t * t,
            margin: params.d_safe,
        }
    }

    /// Returns farther than this cannot matter before the next history flush.
    pub fn radius(&self) -> f64 {
        self.reachable_radius + self.margin
    }
}

/// Drops returns beyond the reachable envelope.
pub fn prune_scan(scan: &RangeImage, v0: &Vector3<f64>, params: &AvoidanceParams) -> RangeImage {
    let limit = RoiEnvelope::for_velocity(v0, params).radius();
    let mut out = scan.clone();
    for r in out.ranges_mut() {
        if *r > limit {
            *r = INVALID_RANGE;
        }
    }
    out
}

/// Whether the aged history value survives against a scan return.
#[inline]
pub fn keep_history(history_range: f64, age: f64, scan_range: f64, tau: f64) -> bool {
    history_range * (age / tau).exp() <= scan_range
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryState {
    pub history: RangeImage,
    pub last_update_time: f64,
}

impl HistoryState {
    pub fn new(history: RangeImage, last_update_time: f64) -> Self {
        Self {
            history,
            last_update_time,
        }
    }

    /// Empty history at `time`.
    pub fn empty(geometry: crate::ImageGeometry, time: f64) -> Self {
        Self::new(RangeImage::invalid(geometry), time)
    }

    /// Folds a pruned scan into the history.
    ///
    /// `motion_since_last` is the sensor motion from the previous update to
    /// `now`; the history is warped into the current frame before merging.
    pub fn aggregate(
        &self,
        scan: &RangeImage,
        motion_since_last: &RigidMotion,
        now: f64,
        params: &AvoidanceParams,
    ) -> Result<HistoryState> {
        if scan.geometry() != self.history.geometry() {
            return Err(AvoidError::GeometryMismatch);
        }
        if now < self.last_update_time {
            return Err(AvoidError::TimeWentBackwards {
                now,
                last: self.last_update_time,
            });
        }
        let elapsed = now - self.last_update_time;

        let mut merged = warp(&self.history, motion_since_last);
        for i in 0..merged.ranges().len() {
            if !is_valid_range(merged.ranges()[i]) {
                continue;
            }
            let age = merged.ages()[i] + elapsed;
            if age > params.t_history + AGE_EPS {
                merged.set_index(i, INVALID_RANGE, 0.0);
            } else {
                merged.ages_mut()[i] = age.min(params.t_history);
            }
        }

        for (i, (&s, _)) in scan.ranges().iter().zip(scan.ages()).enumerate() {
            if !is_valid_range(s) {
                continue;
            }
            let h = merged.ranges()[i];
            if is_valid_range(h) && keep_history(h, merged.ages()[i], s, params.tau) {
                continue;
            }
            merged.set_index(i, s, 0.0);
        }

        Ok(HistoryState::new(merged, now))
    }
}
