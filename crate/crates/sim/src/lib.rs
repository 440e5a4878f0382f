//! Deterministic closed-loop simulator and benchmark harness for the
//! `rangeavoid` obstacle-avoidance engine.
//!
//! A [`Scenario`] describes the world (boxes, spheres, a ground plane), the
//! start state, the avoidance method and a command source. [`Simulation`]
//! then runs the loop scan → avoid → actuate → advance at the control rate
//! and collects [`RunMetrics`].

pub mod command;
pub mod harness;
pub mod lidar;
pub mod metrics;
pub mod scenario;
pub mod scene;
pub mod vehicle;

pub use harness::{run_scenario, write_outputs, RunResult, Simulation, TickRecord};
pub use metrics::{ComputeStats, Outcome, RunMetrics};
pub use scenario::Scenario;
pub use scene::{Primitive, Scene, Shape};
pub use vehicle::UavState;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Avoid(#[from] rangeavoid::AvoidError),
}

/// Directory holding the bundled scenario files.
pub fn bundled_scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}
