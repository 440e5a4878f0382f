//! Run metrics, stall detection and their text formats.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::scenario::StallConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    /// Reached the final waypoint, or finished the time budget of a
    /// goal-less command source without colliding.
    Tracked,
    /// Stalled, or ran out of time before reaching the final waypoint.
    LocalMinimum,
    Collision,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Tracked => "TRACKED",
            Outcome::LocalMinimum => "LOCAL_MINIMUM",
            Outcome::Collision => "COLLISION",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub method: String,
    pub seed: u64,
    pub v_max: f64,
    pub ticks: usize,
    /// Path length until stop (m).
    pub l_path: f64,
    pub v_avg: f64,
    pub t_flight: f64,
    /// Closest ground-truth distance between the vehicle center and any
    /// surface, `inf` when nothing was ever in range.
    pub d_min: f64,
    pub d_avg: f64,
    pub d_target: f64,
    pub success: Outcome,
}

impl RunMetrics {
    /// `key = value` lines. Only simulated quantities go here, so replays
    /// produce identical bytes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "v_max = {}", self.v_max);
        let _ = writeln!(s, "ticks = {}", self.ticks);
        let _ = writeln!(s, "l_path = {}", self.l_path);
        let _ = writeln!(s, "v_avg = {}", self.v_avg);
        let _ = writeln!(s, "t_flight = {}", self.t_flight);
        let _ = writeln!(s, "d_min = {}", self.d_min);
        let _ = writeln!(s, "d_avg = {}", self.d_avg);
        let _ = writeln!(s, "d_target = {}", self.d_target);
        let _ = writeln!(s, "success = {}", self.success);
        s
    }
}

/// Wall-clock cost of the avoidance pipeline per tick, ray casting excluded.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComputeStats {
    pub samples: usize,
    pub min_ms: f64,
    pub avg_ms: f64,
    pub max_ms: f64,
}

impl ComputeStats {
    pub fn from_samples(ms: &[f64]) -> Self {
        if ms.is_empty() {
            return Self::default();
        }
        Self {
            samples: ms.len(),
            min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
            avg_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            max_ms: ms.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "samples = {}\ncompute_min_ms = {:.3}\ncompute_avg_ms = {:.3}\ncompute_max_ms = {:.3}\n",
            self.samples, self.min_ms, self.avg_ms, self.max_ms
        )
    }
}

/// Flags a vehicle that made no net progress over a time window while its
/// goal is still far away.
#[derive(Debug, Clone)]
pub struct StallDetector {
    cfg: StallConfig,
    samples: VecDeque<(f64, Vector3<f64>)>,
}

impl StallDetector {
    pub fn new(cfg: StallConfig) -> Self {
        Self {
            cfg,
            samples: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: f64, position: Vector3<f64>) {
        self.samples.push_back((t, position));
        let horizon = t - self.cfg.window;
        // keep exactly one sample at or before the window start
        while self.samples.len() >= 2 && self.samples[1].0 <= horizon + 1e-9 {
            self.samples.pop_front();
        }
    }

    /// True once a full window is recorded, the net displacement across it
    /// is below the threshold and the goal is still far.
    pub fn stalled(&self, goal_distance: f64) -> bool {
        let (Some(first), Some(last)) = (self.samples.front(), self.samples.back()) else {
            return false;
        };
        if last.0 - first.0 < self.cfg.window - 1e-9 {
            return false;
        }
        (last.1 - first.1).norm() < self.cfg.min_displacement && goal_distance > self.cfg.goal_distance
    }
}
