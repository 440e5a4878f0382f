//! The single simulation driver. It owns the [`Simulation`], paces it
//! against the wall clock and publishes serialized frames.

use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rangeavoid::VelocityCommand;
use rangeavoid_sim::scenario::CommandConfig;
use rangeavoid_sim::{Scenario, Simulation};
use tokio::sync::{broadcast, oneshot};

use crate::protocol::{
    arr, downsample, finite, summarize_trace, Control, Envelope, ServerMessage, StateUpdate, Status, IMAGE_DOWNSAMPLE,
};
use crate::TeleopError;

/// Commands older than this are replaced by hover.
pub const STALE_AFTER: Duration = Duration::from_millis(500);

/// Latest operator command, last writer wins.
#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Option<(VelocityCommand, Instant)>>,
}

impl Mailbox {
    pub fn post(&self, v: VelocityCommand, at: Instant) {
        *self.slot.lock().expect("mailbox poisoned") = Some((v, at));
    }

    pub fn clear(&self) {
        *self.slot.lock().expect("mailbox poisoned") = None;
    }

    /// The posted command if it is at most [`STALE_AFTER`] old at `now`,
    /// zero otherwise.
    pub fn fresh(&self, now: Instant) -> VelocityCommand {
        match *self.slot.lock().expect("mailbox poisoned") {
            Some((v, at)) if now.saturating_duration_since(at) <= STALE_AFTER => v,
            _ => Vector3::zeros(),
        }
    }
}

pub(crate) type Reply = oneshot::Sender<Result<(), String>>;

pub(crate) enum Request {
    Control(Control, Reply),
    /// Name and speed cap of the loaded scenario.
    Describe(oneshot::Sender<(String, f64)>),
    Shutdown,
}

/// Operator-driven copy of a scenario: teleop source and no time budget.
pub fn teleop_scenario(mut s: Scenario) -> Scenario {
    s.command = CommandConfig::Teleop;
    s
}

/// Simulation plus the bookkeeping the wire format needs. Stepping is
/// synchronous so it can be tested without threads.
pub struct Session {
    sim: Simulation,
    episode: u64,
    paused: bool,
    speed: f64,
}

impl Session {
    pub fn new(scenario: Scenario, speed: f64) -> Result<Self, TeleopError> {
        Ok(Self {
            sim: Self::simulation(scenario)?,
            episode: 0,
            paused: false,
            speed,
        })
    }

    fn simulation(scenario: Scenario) -> Result<Simulation, TeleopError> {
        let mut sim = Simulation::new(teleop_scenario(scenario))?;
        sim.set_max_ticks(None);
        sim.set_keep_records(false);
        Ok(sim)
    }

    pub fn simulation_ref(&self) -> &Simulation {
        &self.sim
    }

    pub fn period(&self) -> Duration {
        Duration::from_secs_f64(self.sim.scenario().params.dt / self.speed)
    }

    pub fn is_running(&self) -> bool {
        !self.paused && self.sim.outcome().is_none()
    }

    /// Runs one tick with operator target `target` (capped at `v_max`).
    /// Returns `None` when the run ended instead of producing a tick.
    pub fn step(&mut self, target: VelocityCommand) -> Result<Option<StateUpdate>, TeleopError> {
        let v_max = self.sim.scenario().v_max;
        let target = if target.norm() > v_max {
            target * (v_max / target.norm())
        } else {
            target
        };
        let origin = self.sim.state().position;
        let before = self.sim.tick_count();
        self.sim.step(Some(target))?;
        if self.sim.tick_count() == before {
            return Ok(None);
        }
        let rec = self.sim.last_record().expect("a tick leaves a record");
        let out = self.sim.last_output().expect("a tick leaves an output");
        let t_contact = self.sim.scenario().params.t_contact;
        let image = self
            .sim
            .history()
            .map(|h| downsample(h, IMAGE_DOWNSAMPLE))
            .expect("history exists after a tick");
        Ok(Some(StateUpdate {
            episode: self.episode,
            tick: rec.tick as u64,
            t: rec.t,
            position: arr(&rec.position),
            velocity: arr(&rec.velocity),
            target: arr(&rec.target),
            command: arr(&rec.command),
            regime: rec.regime.as_str().to_string(),
            d_near: finite(rec.d_near),
            d_true: finite(rec.d_true),
            trace: out.trace.as_ref().map(|tr| summarize_trace(tr, &origin, t_contact)),
            range_image: image,
        }))
    }

    pub fn status(&self) -> Status {
        Status {
            scenario: self.sim.scenario().name.clone(),
            episode: self.episode,
            tick: self.sim.tick_count() as u64,
            paused: self.paused,
            speed: self.speed,
            outcome: self.sim.outcome().map(|o| o.as_str().to_string()),
        }
    }

    /// Applies a control; `load` resolves names inside `scenario_dir`.
    pub fn control(&mut self, c: &Control, scenario_dir: &std::path::Path) -> Result<(), TeleopError> {
        match c {
            Control::Pause => self.paused = true,
            Control::Resume => self.paused = false,
            Control::Speed { multiplier } => self.speed = *multiplier,
            Control::Reset => {
                self.sim = Self::simulation(self.sim.scenario().clone())?;
                self.episode += 1;
            }
            Control::Load { scenario } => {
                let path = scenario_dir.join(format!("{scenario}.toml"));
                self.sim = Self::simulation(Scenario::load(&path)?)?;
                self.episode += 1;
            }
        }
        Ok(())
    }
}

pub(crate) struct Driver {
    requests: mpsc::Sender<Request>,
    thread: Option<JoinHandle<()>>,
}

impl Driver {
    pub(crate) fn spawn(
        session: Session,
        scenario_dir: PathBuf,
        mailbox: Arc<Mailbox>,
        frames: broadcast::Sender<Arc<str>>,
    ) -> (Self, mpsc::Sender<Request>) {
        let (tx, rx) = mpsc::channel();
        let thread = std::thread::Builder::new()
            .name("teleop-driver".into())
            .spawn(move || run(session, scenario_dir, mailbox, frames, rx))
            .expect("spawn driver thread");
        (
            Self {
                requests: tx.clone(),
                thread: Some(thread),
            },
            tx,
        )
    }
}

impl Drop for Driver {
    fn drop(&mut self) {
        let _ = self.requests.send(Request::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn publish(frames: &broadcast::Sender<Arc<str>>, msg: ServerMessage) {
    // no subscribers is fine
    let _ = frames.send(Envelope::to_json(msg).into());
}

fn run(
    mut session: Session,
    scenario_dir: PathBuf,
    mailbox: Arc<Mailbox>,
    frames: broadcast::Sender<Arc<str>>,
    requests: mpsc::Receiver<Request>,
) {
    let mut next = Instant::now();
    loop {
        // handle requests until the next tick is due
        let wait = if session.is_running() {
            next.saturating_duration_since(Instant::now())
        } else {
            Duration::from_millis(50)
        };
        match requests.recv_timeout(wait) {
            Ok(Request::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
            Ok(Request::Control(c, reply)) => {
                let result = session.control(&c, &scenario_dir).map_err(|e| e.to_string());
                let applied = result.is_ok();
                if applied && matches!(c, Control::Reset | Control::Load { .. }) {
                    mailbox.clear();
                }
                let _ = reply.send(result);
                if applied {
                    publish(&frames, ServerMessage::Status(session.status()));
                }
                next = Instant::now();
                continue;
            }
            Ok(Request::Describe(reply)) => {
                let s = session.sim.scenario();
                let _ = reply.send((s.name.clone(), s.v_max));
                continue;
            }
            Err(RecvTimeoutError::Timeout) => {}
        }
        if !session.is_running() {
            continue;
        }
        let now = Instant::now();
        match session.step(mailbox.fresh(now)) {
            Ok(Some(update)) => publish(&frames, ServerMessage::StateUpdate(Box::new(update))),
            Ok(None) => {}
            Err(e) => {
                publish(
                    &frames,
                    ServerMessage::Error(crate::protocol::ErrorFrame::new(
                        crate::protocol::ErrorCode::ControlFailed,
                        format!("simulation stopped: {e}"),
                    )),
                );
                session.paused = true;
            }
        }
        if !session.is_running() {
            publish(&frames, ServerMessage::Status(session.status()));
        }
        next += session.period();
        // fall behind gracefully instead of bursting to catch up
        if next < now {
            next = now;
        }
    }
}
