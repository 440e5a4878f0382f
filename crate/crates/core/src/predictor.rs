//! Velocity magnitude from predicted time-to-contact.
//!
//! The future is unrolled at the control period: each step advances a
//! per-axis bang-bang motion model, warps the history into the predicted
//! sensor frame and reruns the direction pipeline there, feeding the
//! previous command back in as the target. The first step whose image holds
//! a return inside `d_safe` fixes the time-to-contact `t`, and the command is
//! scaled by `t / t_contact`.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::params::AvoidanceParams;
use crate::push_blend::compute_push;
use crate::angular_field::support_cutoff;
use crate::range_image::{ImageGeometry, Projector, RangeImage, INVALID_RANGE};
use crate::steering::{steer, steer_free};
use crate::{AvoidError, Result, VelocityCommand};

/// Minimum per-step growth of the obstacle distance for an escape to count.
const ESCAPE_EPS: f64 = 1e-6;

/// Closed-form single-axis motion under a maximum-acceleration controller.
///
/// Returns the displacement and velocity after `dt` when the velocity is
/// driven from `v0` toward `v_cmd` at `a_max`.
#[inline]
pub fn step_axis(v0: f64, v_cmd: f64, dt: f64, a_max: f64) -> (f64, f64) {
    let diff = v_cmd - v0;
    let t_accel = diff.abs() / a_max;
    let accel = if diff > 0.0 {
        a_max
    } else if diff < 0.0 {
        -a_max
    } else {
        0.0
    };
    let t_a = t_accel.min(dt);
    let p = t_a * v0 + 0.5 * t_a * t_a * accel + (dt - t_accel).max(0.0) * v_cmd;
    // once the setpoint is reached the controller holds it exactly
    let v = if t_accel <= dt { v_cmd } else { v0 + t_a * accel };
    (p, v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModelState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl MotionModelState {
    /// Egocentric start: origin with the measured velocity.
    pub fn start(velocity: Vector3<f64>) -> Self {
        Self {
            position: Vector3::zeros(),
            velocity,
        }
    }

    /// Applies [`step_axis`] to each axis independently.
    pub fn step(&self, cmd: &VelocityCommand, dt: f64, a_max: f64) -> Self {
        let mut next = *self;
        for i in 0..3 {
            let (dp, v) = step_axis(self.velocity[i], cmd[i], dt, a_max);
            next.position[i] += dp;
            next.velocity[i] = v;
        }
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    HorizonReached,
    SafetyBreach,
    AlreadyInside,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::HorizonReached => "HORIZON_REACHED",
            StopReason::SafetyBreach => "SAFETY_BREACH",
            StopReason::AlreadyInside => "ALREADY_INSIDE",
        }
    }
}

impl std::str::FromStr for StopReason {
    type Err = AvoidError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HORIZON_REACHED" => Ok(StopReason::HorizonReached),
            "SAFETY_BREACH" => Ok(StopReason::SafetyBreach),
            "ALREADY_INSIDE" => Ok(StopReason::AlreadyInside),
            other => Err(AvoidError::Record(format!("unknown stop reason {other:?}"))),
        }
    }
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedStep {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Command applied during the step that ended at `t`.
    pub command: VelocityCommand,
    pub d_near: f64,
}

/// Result of the dedicated unroll run when the start is already inside
/// `d_safe`.
#[derive(Debug, Clone, PartialEq)]
pub struct EscapeCheck {
    pub steps: Vec<PredictedStep>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub steps: Vec<PredictedStep>,
    pub stop_reason: StopReason,
    pub t_stop: f64,
    /// Closest return in the unwarped history.
    pub d_near0: f64,
    pub escape: Option<EscapeCheck>,
    /// Push-force command used when an escape check fails.
    pub fallback: VelocityCommand,
}

/// History returns as 3D points, bucketed by distance from the sensor so a
/// translated copy only visits points that can still matter.
pub struct LiftedImage {
    template: RangeImage,
    projector: Projector,
    /// `(point, age)` in ascending distance buckets, row-major within one.
    points: Vec<(Vector3<f64>, f64)>,
    /// Start of each bucket in `points`, plus the end.
    bucket_starts: Vec<usize>,
}

const BUCKET_WIDTH: f64 = 0.5;

impl LiftedImage {
    pub fn new(img: &RangeImage) -> Self {
        let geom = img.geometry();
        let table = geom.direction_table();
        let bucket = |r: f64| (r / BUCKET_WIDTH) as usize;
        let n_buckets = img.max_range().map_or(0, |r| bucket(r) + 1);
        let mut bucket_starts = vec![0usize; n_buckets + 1];
        for (_, r, _) in img.valid() {
            bucket_starts[bucket(r) + 1] += 1;
        }
        for b in 0..n_buckets {
            bucket_starts[b + 1] += bucket_starts[b];
        }
        let mut fill = bucket_starts.clone();
        let mut points = vec![(Vector3::zeros(), 0.0); bucket_starts[n_buckets]];
        for (i, r, age) in img.valid() {
            let px = geom.pixel_at(i);
            let slot = &mut fill[bucket(r)];
            points[*slot] = (table.unit(px.col, px.row) * r, age);
            *slot += 1;
        }
        Self {
            template: RangeImage::invalid(*geom),
            projector: Projector::new(geom),
            points,
            bucket_starts,
        }
    }

    pub fn blank(&self) -> RangeImage {
        self.template.clone()
    }

    /// Equivalent to warping by a pure translation of the sensor.
    pub fn translated_into(&self, sensor_offset: &Vector3<f64>, out: &mut RangeImage) {
        out.clear();
        self.scan(sensor_offset, None, |j, n, age| out.keep_min(j, n, age));
    }

    /// Like [`translated_into`](Self::translated_into) but only writes
    /// returns that can exert a force on a vehicle moving at `velocity`.
    /// Returns the exact nearest distance of the full translated image.
    pub fn translated_relevant_into(
        &self,
        sensor_offset: &Vector3<f64>,
        velocity: &Vector3<f64>,
        params: &AvoidanceParams,
        out: &mut RangeImage,
    ) -> f64 {
        out.clear();
        let filter = Relevance::new(velocity, out.geometry(), params);
        self.scan(sensor_offset, filter.as_ref(), |j, n, age| out.keep_min(j, n, age))
    }

    fn translated_relevant_sparse(
        &self,
        sensor_offset: &Vector3<f64>,
        velocity: &Vector3<f64>,
        params: &AvoidanceParams,
        out: &mut SparseImage,
    ) -> f64 {
        out.clear();
        let filter = Relevance::new(velocity, out.image.geometry(), params);
        self.scan(sensor_offset, filter.as_ref(), |j, n, age| out.keep_min(j, n, age))
    }

    /// Emits every relevant translated return and returns the nearest
    /// distance over all returns still inside the field of view.
    fn scan(
        &self,
        sensor_offset: &Vector3<f64>,
        filter: Option<&Relevance>,
        mut emit: impl FnMut(usize, f64, f64),
    ) -> f64 {
        let radius = filter.map_or(f64::INFINITY, |f| f.radius);
        let r2 = radius * radius;
        let shift = sensor_offset.norm();
        let mut d_near = f64::INFINITY;
        for b in 0..self.bucket_starts.len() - 1 {
            // every point here is at least this far from the new origin
            let lower = b as f64 * BUCKET_WIDTH - shift;
            if lower >= radius.max(d_near) + 1e-9 {
                break;
            }
            for (p, age) in &self.points[self.bucket_starts[b]..self.bucket_starts[b + 1]] {
                let q = p - sensor_offset;
                let n2 = q.norm_squared();
                if n2 >= r2 && n2 >= d_near * d_near {
                    continue;
                }
                let n = n2.sqrt();
                let relevant = n2 < r2 && filter.is_none_or(|f| f.keeps(&q, n));
                if !relevant && n >= d_near {
                    continue;
                }
                let Some(j) = self.projector.index(&q, n) else {
                    continue;
                };
                d_near = d_near.min(n);
                if relevant {
                    emit(j, n, *age);
                }
            }
        }
        d_near
    }
}

/// Predicted image that remembers which pixels were written, so clearing
/// and iterating cost only what the last warp produced.
struct SparseImage {
    image: RangeImage,
    written: Vec<u64>,
}

impl SparseImage {
    fn new(image: RangeImage) -> Self {
        let words = image.geometry().len().div_ceil(64);
        Self {
            image,
            written: vec![0; words],
        }
    }

    fn keep_min(&mut self, j: usize, n: f64, age: f64) {
        self.image.keep_min(j, n, age);
        self.written[j / 64] |= 1 << (j % 64);
    }

    fn clear(&mut self) {
        for w in 0..self.written.len() {
            let mut bits = std::mem::take(&mut self.written[w]);
            while bits != 0 {
                let j = w * 64 + bits.trailing_zeros() as usize;
                self.image.ranges_mut()[j] = INVALID_RANGE;
                self.image.ages_mut()[j] = 0.0;
                bits &= bits - 1;
            }
        }
    }

    /// `(index, range)` of the written pixels in ascending index order.
    fn pixels(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let ranges = self.image.ranges();
        self.written.iter().enumerate().flat_map(move |(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let j = w * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some((j, ranges[j]))
            })
        })
    }
}

/// Conservative test for a nonzero support radius, evaluated on the raw
/// point direction. The slack covers the offset between a point and the
/// center of the pixel it lands in.
struct Relevance {
    velocity: Vector3<f64>,
    radius: f64,
    slack: f64,
    d_safe: f64,
    t_contact: f64,
    d_min_contact: f64,
}

impl Relevance {
    fn new(velocity: &Vector3<f64>, geom: &ImageGeometry, params: &AvoidanceParams) -> Option<Self> {
        let radius = support_cutoff(velocity.norm(), params);
        if !radius.is_finite() {
            return None;
        }
        Some(Self {
            velocity: *velocity,
            radius,
            slack: velocity.norm() * (geom.phi_step() + geom.theta_step()),
            d_safe: params.d_safe,
            t_contact: params.t_contact,
            d_min_contact: params.d_min_contact,
        })
    }

    #[inline]
    fn keeps(&self, q: &Vector3<f64>, n: f64) -> bool {
        let v_toward = self.velocity.dot(q) / n + self.slack;
        n - (self.t_contact * v_toward).max(self.d_min_contact) < self.d_safe
    }
}

/// Unrolls the closed loop from `v_cmd0` until the horizon or until a
/// predicted image holds a return closer than `d_safe`.
pub fn unroll(
    history: &RangeImage,
    v_cmd0: &VelocityCommand,
    v0: &Vector3<f64>,
    params: &AvoidanceParams,
) -> PredictionTrace {
    let lifted = LiftedImage::new(history);
    let d_near0 = history.nearest_distance();

    if d_near0 < params.d_safe {
        let escape = escape_check(&lifted, d_near0, v_cmd0, v0, params);
        let push = compute_push(history, params).vector;
        let cap = v_cmd0.norm();
        let fallback = if push.norm() > cap {
            push * (cap / push.norm())
        } else {
            push
        };
        return PredictionTrace {
            steps: Vec::new(),
            stop_reason: StopReason::AlreadyInside,
            t_stop: 0.0,
            d_near0,
            escape: Some(escape),
            fallback,
        };
    }

    let n = params.horizon_steps();
    let mut steps = Vec::with_capacity(n);
    let mut state = MotionModelState::start(*v0);
    let mut cmd = *v_cmd0;
    let geom = *history.geometry();
    let table = geom.direction_table();
    let mut image = SparseImage::new(lifted.blank());
    let mut stop = (StopReason::HorizonReached, params.t_contact);

    for k in 1..=n {
        state = state.step(&cmd, params.dt, params.a_max);
        let t = k as f64 * params.dt;
        let d_near = lifted.translated_relevant_sparse(&state.position, &state.velocity, params, &mut image);
        steps.push(PredictedStep {
            t,
            position: state.position,
            velocity: state.velocity,
            command: cmd,
            d_near,
        });
        if d_near < params.d_safe {
            stop = (StopReason::SafetyBreach, t.min(params.t_contact));
            break;
        }
        if k == n {
            break;
        }
        // nothing is inside d_safe here, so the pipeline runs in the free
        // regime and only the written pixels matter
        cmd = steer_free(&geom, &table, image.pixels(), &cmd, &state.velocity, params);
    }

    PredictionTrace {
        steps,
        stop_reason: stop.0,
        t_stop: stop.1,
        d_near0,
        escape: None,
        fallback: Vector3::zeros(),
    }
}

/// Passes when the obstacle distance grows in every predicted step until
/// the vehicle leaves the `d_safe` shell or the horizon ends.
fn escape_check(
    lifted: &LiftedImage,
    d_near0: f64,
    v_cmd0: &VelocityCommand,
    v0: &Vector3<f64>,
    params: &AvoidanceParams,
) -> EscapeCheck {
    let mut steps = Vec::new();
    let mut state = MotionModelState::start(*v0);
    let mut cmd = *v_cmd0;
    let mut image = SparseImage::new(lifted.blank());
    let mut d_prev = d_near0;

    for k in 1..=params.horizon_steps() {
        state = state.step(&cmd, params.dt, params.a_max);
        let d_near = lifted.translated_relevant_sparse(&state.position, &state.velocity, params, &mut image);
        steps.push(PredictedStep {
            t: k as f64 * params.dt,
            position: state.position,
            velocity: state.velocity,
            command: cmd,
            d_near,
        });
        if !(d_near > d_prev + ESCAPE_EPS) {
            return EscapeCheck {
                steps,
                passed: false,
            };
        }
        if d_near >= params.d_safe {
            break;
        }
        d_prev = d_near;
        cmd = steer(&image.image, &cmd, &state.velocity, Some(&cmd), params).command;
    }
    EscapeCheck {
        steps,
        passed: true,
    }
}

/// Applies the time-to-contact scaling to the unscaled command.
pub fn scale_command(
    trace: &PredictionTrace,
    v_cmd0: &VelocityCommand,
    params: &AvoidanceParams,
) -> VelocityCommand {
    match trace.stop_reason {
        StopReason::HorizonReached => *v_cmd0,
        StopReason::SafetyBreach => v_cmd0 * (trace.t_stop / params.t_contact).clamp(0.0, 1.0),
        StopReason::AlreadyInside => {
            if trace.escape.as_ref().is_some_and(|e| e.passed) {
                *v_cmd0
            } else {
                trace.fallback
            }
        }
    }
}

/// Time-to-contact without unrolling: each return is approached at the
/// command's projection onto its direction. Clamped to `[0, t_contact]`.
pub fn projected_time_to_contact(
    history: &RangeImage,
    v_cmd0: &VelocityCommand,
    params: &AvoidanceParams,
) -> f64 {
    let geom = history.geometry();
    let table = geom.direction_table();
    let mut t = params.t_contact;
    for (i, r, _) in history.valid() {
        let px = geom.pixel_at(i);
        let v_toward = table.unit(px.col, px.row).dot(v_cmd0);
        if v_toward > 0.0 {
            t = t.min(((r - params.d_safe) / v_toward).max(0.0));
        }
    }
    t
}

/// Scaling for the prediction-free variant. Inside `d_safe` the command is
/// kept only if it points away from every return in the shell.
pub fn scale_by_projection(
    history: &RangeImage,
    v_cmd0: &VelocityCommand,
    params: &AvoidanceParams,
) -> VelocityCommand {
    let d_near = history.nearest_distance();
    if d_near < params.d_safe {
        let geom = history.geometry();
        let table = geom.direction_table();
        let approaching = history.valid().any(|(i, r, _)| {
            let px = geom.pixel_at(i);
            r < params.d_safe && table.unit(px.col, px.row).dot(v_cmd0) > 0.0
        });
        if !approaching {
            return *v_cmd0;
        }
        let push = compute_push(history, params).vector;
        let cap = v_cmd0.norm();
        return if push.norm() > cap {
            push * (cap / push.norm())
        } else {
            push
        };
    }
    v_cmd0 * (projected_time_to_contact(history, v_cmd0, params) / params.t_contact)
}

fn fmt_vec(v: &Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| AvoidError::Record(format!("bad number {s:?}")))
}

fn parse_vec(s: &str) -> Result<Vector3<f64>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(AvoidError::Record(format!("bad vector {s:?}")));
    }
    Ok(Vector3::new(
        parse_f64(parts[0])?,
        parse_f64(parts[1])?,
        parse_f64(parts[2])?,
    ))
}

fn fields(line: &str) -> impl Iterator<Item = (&str, &str)> {
    line.split_whitespace()
        .skip(1)
        .filter_map(|kv| kv.split_once('='))
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    fields(line)
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| AvoidError::Record(format!("missing field {key:?}")))
}

impl PredictedStep {
    fn write(&self, tag: &str, out: &mut String) {
        let _ = writeln!(
            out,
            "{tag} t={} pos={} vel={} cmd={} d_near={}",
            self.t,
            fmt_vec(&self.position),
            fmt_vec(&self.velocity),
            fmt_vec(&self.command),
            self.d_near
        );
    }

    fn parse(line: &str) -> Result<Self> {
        Ok(Self {
            t: parse_f64(field(line, "t")?)?,
            position: parse_vec(field(line, "pos")?)?,
            velocity: parse_vec(field(line, "vel")?)?,
            command: parse_vec(field(line, "cmd")?)?,
            d_near: parse_f64(field(line, "d_near")?)?,
        })
    }
}

impl PredictionTrace {
    /// Line-oriented text form: one header line, then one line per step.
    ///
    /// ```text
    /// trace stop_reason=SAFETY_BREACH t_stop=0.2 d_near0=2 escape=none fallback=0,0,0
    /// step t=0.05 pos=0.15,0,0 vel=3,0,0 cmd=3,0,0 d_near=1.85
    /// ```
    ///
    /// Escape-check steps use the `escape_step` tag.
    pub fn to_record(&self) -> String {
        let escape = match &self.escape {
            None => "none",
            Some(e) if e.passed => "passed",
            Some(_) => "failed",
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "trace stop_reason={} t_stop={} d_near0={} escape={} fallback={}",
            self.stop_reason,
            self.t_stop,
            self.d_near0,
            escape,
            fmt_vec(&self.fallback)
        );
        for s in &self.steps {
            s.write("step", &mut out);
        }
        if let Some(e) = &self.escape {
            for s in &e.steps {
                s.write("escape_step", &mut out);
            }
        }
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .filter(|l| l.starts_with("trace "))
            .ok_or_else(|| AvoidError::Record("missing trace header".into()))?;
        let mut escape = match field(header, "escape")? {
            "none" => None,
            "passed" => Some(EscapeCheck {
                steps: Vec::new(),
                passed: true,
            }),
            "failed" => Some(EscapeCheck {
                steps: Vec::new(),
                passed: false,
            }),
            other => return Err(AvoidError::Record(format!("bad escape flag {other:?}"))),
        };
        let mut steps = Vec::new();
        for line in lines {
            match line.split_whitespace().next() {
                Some("step") => steps.push(PredictedStep::parse(line)?),
                Some("escape_step") => escape
                    .as_mut()
                    .ok_or_else(|| AvoidError::Record("escape step without escape check".into()))?
                    .steps
                    .push(PredictedStep::parse(line)?),
                _ => return Err(AvoidError::Record(format!("unexpected line {line:?}"))),
            }
        }
        Ok(Self {
            steps,
            stop_reason: field(header, "stop_reason")?.parse()?,
            t_stop: parse_f64(field(header, "t_stop")?)?,
            d_near0: parse_f64(field(header, "d_near0")?)?,
            escape,
            fallback: parse_vec(field(header, "fallback")?)?,
        })
    }
}
