//! Closed-loop runner: scan, avoid, actuate, advance.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rangeavoid::{Avoider, RangeImage, Regime, RigidMotion, StopReason, TickOutput, VelocityCommand};

use crate::command::CommandSource;
use crate::lidar::{apply_range_noise, raycast_scan, ScanOutcome};
use crate::metrics::{ComputeStats, Outcome, RunMetrics, StallDetector};
use crate::scenario::Scenario;
use crate::vehicle::{check_collision, step_vehicle, CollisionStatus, UavState};
use crate::SimError;

const VISIBILITY_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: usize,
    /// Time at which the scan was taken.
    pub t: f64,
    /// State after actuating this tick's command.
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub target: VelocityCommand,
    pub command: VelocityCommand,
    pub unscaled: VelocityCommand,
    pub regime: Regime,
    /// Closest return in the history image.
    pub d_near: f64,
    /// Ground-truth distance after the step.
    pub d_true: f64,
    pub stop_reason: Option<StopReason>,
    pub t_stop: f64,
    pub scale: f64,
    /// Angle between the angular field's input target and its output
    /// direction (rad), `NaN` when the field did not run.
    pub deflection: f64,
    pub fov_clipped: bool,
    pub compute_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: RunMetrics,
    pub records: Vec<TickRecord>,
    pub compute: ComputeStats,
}

pub struct Simulation {
    scenario: Scenario,
    avoider: Avoider,
    source: CommandSource,
    state: UavState,
    last_scan_position: Vector3<f64>,
    visibility_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    stall: StallDetector,
    tick: usize,
    max_ticks: Option<usize>,
    outcome: Option<Outcome>,
    keep_records: bool,
    records: Vec<TickRecord>,
    last_record: Option<TickRecord>,
    last_output: Option<TickOutput>,
    compute_ms: Vec<f64>,
    l_path: f64,
    d_min: f64,
    d_sum: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let avoider = Avoider::new(scenario.params.clone(), scenario.method, scenario.v_max)?;
        let source = CommandSource::new(&scenario.command, scenario.v_max, scenario.params.dt, scenario.seed);
        let start = Vector3::from(scenario.start.position);
        let state = UavState {
            position: start,
            velocity: Vector3::from(scenario.start.velocity),
            time: 0.0,
        };
        let mut stall = StallDetector::new(scenario.stall);
        stall.push(0.0, start);
        Ok(Self {
            avoider,
            source,
            state,
            last_scan_position: start,
            visibility_rng: stream(scenario.seed, VISIBILITY_STREAM),
            noise_rng: stream(scenario.seed, NOISE_STREAM),
            stall,
            tick: 0,
            max_ticks: Some(scenario.max_ticks()),
            outcome: None,
            keep_records: true,
            records: Vec::new(),
            last_record: None,
            last_output: None,
            compute_ms: Vec::new(),
            l_path: 0.0,
            d_min: f64::INFINITY,
            d_sum: 0.0,
            scenario,
        })
    }

    /// Overrides the time budget; `None` runs until another stop condition.
    pub fn set_max_ticks(&mut self, ticks: Option<usize>) {
        self.max_ticks = ticks;
    }

    /// Stops accumulating per-tick records (long-running sessions).
    pub fn set_keep_records(&mut self, keep: bool) {
        self.keep_records = keep;
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &UavState {
        &self.state
    }

    pub fn tick_count(&self) -> usize {
        self.tick
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn last_output(&self) -> Option<&TickOutput> {
        self.last_output.as_ref()
    }

    pub fn last_record(&self) -> Option<&TickRecord> {
        self.last_record.as_ref()
    }

    pub fn history(&self) -> Option<&RangeImage> {
        self.avoider.history()
    }

    pub fn goal(&self) -> Option<Vector3<f64>> {
        self.source.goal()
    }

    fn budget_outcome(&self) -> Outcome {
        if self.source.is_waypoint_mode() {
            Outcome::LocalMinimum
        } else {
            Outcome::Tracked
        }
    }

    /// Runs one control tick. Returns `false` once the run has ended.
    /// `external` is the teleop target and is ignored by other sources.
    pub fn step(&mut self, external: Option<VelocityCommand>) -> Result<bool, SimError> {
        if self.outcome.is_some() {
            return Ok(false);
        }
        if self.max_ticks.is_some_and(|m| self.tick >= m) {
            self.outcome = Some(self.budget_outcome());
            return Ok(false);
        }
        let p = &self.scenario.params;
        let dt = p.dt;
        let t = self.tick as f64 * dt;

        let visible: Vec<bool> = self
            .scenario
            .scene
            .primitives
            .iter()
            .map(|prim| prim.visibility >= 1.0 || self.visibility_rng.random::<f64>() < prim.visibility)
            .collect();
        let scan = match raycast_scan(
            &self.scenario.scene,
            &visible,
            &self.state.position,
            &p.geometry,
            &self.scenario.lidar,
        ) {
            ScanOutcome::Clear(img) => apply_range_noise(&img, self.scenario.lidar.range_noise_std, &mut self.noise_rng),
            ScanOutcome::Collided => {
                self.outcome = Some(Outcome::Collision);
                return Ok(false);
            }
        };

        let target = self.source.target(self.tick, t, &self.state.position, external);
        let mut v_meas = self.state.velocity;
        if self.scenario.noise.velocity_std > 0.0 {
            let normal = Normal::new(0.0, self.scenario.noise.velocity_std).expect("positive std");
            for i in 0..3 {
                v_meas[i] += normal.sample(&mut self.noise_rng);
            }
        }
        let motion = RigidMotion::from_translation(self.state.position - self.last_scan_position);
        self.last_scan_position = self.state.position;

        let started = Instant::now();
        let out = self.avoider.tick(&scan, &motion, v_meas, target, t)?;
        let compute_ms = started.elapsed().as_secs_f64() * 1e3;

        let next = step_vehicle(&self.state, &out.command, dt, p.a_max);
        self.l_path += (next.position - self.state.position).norm();
        self.state = next;
        let collision = check_collision(&self.scenario.scene, &self.state.position, self.scenario.uav_radius);
        self.d_min = self.d_min.min(collision.d_true);
        self.d_sum += collision.d_true;
        self.compute_ms.push(compute_ms);

        let deflection = out.direction.as_ref().map_or(f64::NAN, |d| {
            let ft = out.field_target.normalize();
            ft.dot(&d.direction).clamp(-1.0, 1.0).acos()
        });
        let record = TickRecord {
            tick: self.tick,
            t,
            position: self.state.position,
            velocity: self.state.velocity,
            target,
            command: out.command,
            unscaled: out.unscaled,
            regime: out.regime.regime,
            d_near: out.regime.d_near,
            d_true: collision.d_true,
            stop_reason: out.trace.as_ref().map(|tr| tr.stop_reason),
            t_stop: out.trace.as_ref().map_or(f64::NAN, |tr| tr.t_stop),
            scale: out.scale,
            deflection,
            fov_clipped: out.direction.as_ref().is_some_and(|d| d.fov_clipped),
            compute_ms,
        };
        if self.keep_records {
            self.records.push(record.clone());
        }
        self.last_record = Some(record);
        self.last_output = Some(out);
        self.tick += 1;

        self.source.advance(&self.state.position);
        self.stall.push(self.state.time, self.state.position);
        if collision.status == CollisionStatus::Collided {
            self.outcome = Some(Outcome::Collision);
        } else if self.source.finished() {
            self.outcome = Some(Outcome::Tracked);
        } else if self.source.is_waypoint_mode() {
            let goal_distance = self
                .source
                .goal()
                .map_or(0.0, |g| (g - self.state.position).norm());
            if self.stall.stalled(goal_distance) {
                self.outcome = Some(Outcome::LocalMinimum);
            }
        }
        Ok(self.outcome.is_none())
    }

    pub fn metrics(&self) -> RunMetrics {
        let t_flight = self.tick as f64 * self.scenario.params.dt;
        RunMetrics {
            scenario: self.scenario.name.clone(),
            method: self.scenario.method.to_string(),
            seed: self.scenario.seed,
            v_max: self.scenario.v_max,
            ticks: self.tick,
            l_path: self.l_path,
            v_avg: if t_flight > 0.0 { self.l_path / t_flight } else { 0.0 },
            t_flight,
            d_min: self.d_min,
            d_avg: if self.tick > 0 {
                self.d_sum / self.tick as f64
            } else {
                f64::INFINITY
            },
            d_target: self.source.d_target(&self.state.position),
            success: self.outcome.unwrap_or(self.budget_outcome()),
        }
    }

    pub fn run(mut self) -> Result<RunResult, SimError> {
        while self.step(None)? {}
        Ok(self.finish())
    }

    pub fn finish(self) -> RunResult {
        RunResult {
            metrics: self.metrics(),
            compute: ComputeStats::from_samples(&self.compute_ms),
            records: self.records,
        }
    }
}

pub fn run_scenario(scenario: Scenario) -> Result<RunResult, SimError> {
    Simulation::new(scenario)?.run()
}

fn vec_cols(v: &Vector3<f64>) -> String {
    format!("{}\t{}\t{}", v.x, v.y, v.z)
}

/// Per-tick table, tab separated with a header line. Wall-clock timings are
/// left out so the table replays byte for byte.
pub fn ticks_table(records: &[TickRecord]) -> String {
    let mut s = String::from(
        "tick\tt\tx\ty\tz\tvx\tvy\tvz\ttarget_x\ttarget_y\ttarget_z\tcmd_x\tcmd_y\tcmd_z\t\
         unscaled_x\tunscaled_y\tunscaled_z\tregime\td_near\td_true\tstop_reason\tt_stop\tscale\tdeflection\tfov_clipped\n",
    );
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.tick,
            r.t,
            vec_cols(&r.position),
            vec_cols(&r.velocity),
            vec_cols(&r.target),
            vec_cols(&r.command),
            vec_cols(&r.unscaled),
            r.regime,
            r.d_near,
            r.d_true,
            r.stop_reason.map_or("-", |s| s.as_str()),
            r.t_stop,
            r.scale,
            r.deflection,
            r.fov_clipped
        );
    }
    s
}

/// Writes `metrics.txt`, `ticks.tsv` and `timing.txt` into `dir`.
pub fn write_outputs(dir: impl AsRef<Path>, result: &RunResult) -> Result<(), SimError> {
    let dir = dir.as_ref();
    let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("metrics.txt"), result.metrics.to_text()).map_err(io)?;
    std::fs::write(dir.join("ticks.tsv"), ticks_table(&result.records)).map_err(io)?;
    std::fs::write(dir.join("timing.txt"), result.compute.to_text()).map_err(io)?;
    Ok(())
}
