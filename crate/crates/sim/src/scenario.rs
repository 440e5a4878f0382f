//! Scenario files.
//!
//! A scenario is a TOML document; unknown keys are ignored so older
//! runners accept newer files.
//!
//! ```toml
//! name = "gap"
//! method = "angular"        # angular | angular_no_vel | angular_no_pred | sphere_pf
//! seed = 1
//! duration = 20.0           # time budget, s
//! v_max = 3.0               # commanded speed, m/s
//! uav_radius = 0.3
//!
//! [start]
//! position = [0.0, 0.0, 3.0]
//! velocity = [0.0, 0.0, 0.0]
//!
//! [command]
//! type = "waypoints"        # waypoints | random | script | teleop
//! points = [[30.0, 0.0, 3.0]]
//! arrival_radius = 1.5
//!
//! [params]                  # avoidance parameters, all optional
//! d_safe = 1.5
//!
//! [lidar]
//! max_range = 100.0
//! range_noise_std = 0.0
//!
//! [noise]
//! velocity_std = 0.0
//!
//! [stall]
//! window = 10.0
//! min_displacement = 0.5
//! goal_distance = 2.0
//!
//! [scene]
//! bounds = { min = [-5.0, -20.0, -5.0], max = [40.0, 20.0, 20.0] }
//!
//! [[scene.primitives]]
//! type = "box"              # box | sphere | ground
//! min = [9.0, 2.0, -5.0]
//! max = [11.0, 4.0, 15.0]
//! visibility = 1.0          # per-scan detection probability
//! ```
//!
//! Command sources:
//!
//! * `waypoints`: fly toward each point in turn at `v_max`, switching when
//!   within `arrival_radius`. Ends on arrival at the last point.
//! * `random`: every `resample_period` seconds pick a uniform target in
//!   `region` (an `{ min, max }` box) and fly toward it at `v_max`.
//! * `script`: `segments = [{ duration = 2.0, velocity = [1.0, 0.0, 0.0] }]`,
//!   hover afterwards.
//! * `teleop`: targets come from an external source each tick.

use std::path::Path;

use nalgebra::Vector3;
use rangeavoid::{AvoidanceParams, Method};
use serde::{Deserialize, Serialize};

use crate::lidar::LidarConfig;
use crate::scene::{Aabb, Scene};
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptSegment {
    pub duration: f64,
    pub velocity: [f64; 3],
}

fn default_arrival() -> f64 {
    1.5
}

fn default_resample() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CommandConfig {
    Waypoints {
        points: Vec<[f64; 3]>,
        #[serde(default = "default_arrival")]
        arrival_radius: f64,
    },
    Random {
        region: Aabb,
        #[serde(default = "default_resample")]
        resample_period: f64,
        #[serde(default = "default_arrival")]
        arrival_radius: f64,
    },
    Script {
        segments: Vec<ScriptSegment>,
    },
    Teleop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of the per-axis velocity estimate noise (m/s).
    pub velocity_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StallConfig {
    pub window: f64,
    pub min_displacement: f64,
    pub goal_distance: f64,
}

impl Default for StallConfig {
    fn default() -> Self {
        Self {
            window: 10.0,
            min_displacement: 0.5,
            goal_distance: 2.0,
        }
    }
}

fn default_uav_radius() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    pub duration: f64,
    pub v_max: f64,
    #[serde(default = "default_uav_radius")]
    pub uav_radius: f64,
    pub start: StartState,
    pub command: CommandConfig,
    #[serde(default)]
    pub params: AvoidanceParams,
    #[serde(default)]
    pub lidar: LidarConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub stall: StallConfig,
    pub scene: Scene,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Parse(msg) => SimError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if !(self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.v_max > 0.0) {
            return bad(format!("v_max must be positive, got {}", self.v_max));
        }
        if !(self.uav_radius > 0.0) {
            return bad(format!("uav_radius must be positive, got {}", self.uav_radius));
        }
        self.params.validate()?;
        self.scene.validate()?;
        if !self.scene.bounds.contains(&Vector3::from(self.start.position)) {
            return bad("start position lies outside the scene bounds".into());
        }
        match &self.command {
            CommandConfig::Waypoints { points, arrival_radius } => {
                if points.is_empty() {
                    return bad("waypoint list is empty".into());
                }
                if !(*arrival_radius > 0.0) {
                    return bad("arrival_radius must be positive".into());
                }
            }
            CommandConfig::Random {
                region,
                resample_period,
                arrival_radius,
            } => {
                if !(0..3).all(|i| region.min[i] <= region.max[i]) {
                    return bad("random region must have min <= max".into());
                }
                if !(*resample_period > 0.0 && *arrival_radius > 0.0) {
                    return bad("resample_period and arrival_radius must be positive".into());
                }
            }
            CommandConfig::Script { segments } => {
                if segments.iter().any(|s| !(s.duration > 0.0)) {
                    return bad("script segment durations must be positive".into());
                }
            }
            CommandConfig::Teleop => {}
        }
        Ok(())
    }

    /// Number of control ticks in the time budget.
    pub fn max_ticks(&self) -> usize {
        (self.duration / self.params.dt).round() as usize
    }

    /// Same scenario flown at another speed.
    pub fn with_speed(mut self, v_max: f64) -> Self {
        self.v_max = v_max;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }
}
