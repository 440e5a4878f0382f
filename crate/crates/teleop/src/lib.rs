//! Live teleoperation bridge for the simulator.
//!
//! One driver thread runs the closed loop at real-time rate (scaled by a
//! speed multiplier) and treats the latest operator command as the target
//! velocity. Clients connect to the `/session` WebSocket, receive a
//! `state_update` frame per tick and send `command_input` and
//! `scenario_control` frames. Operator input always passes through the full
//! avoidance pipeline; there is no direct path to the vehicle.
//!
//! The wire format is described in [`protocol`].

pub mod driver;
pub mod protocol;
pub mod server;

pub use driver::{Mailbox, Session, STALE_AFTER};
pub use server::{start, RunningServer, ServeConfig};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("cannot bind {0}")]
    Bind(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] rangeavoid_sim::SimError),
}

/// Runs the service on its own runtime until the server stops.
pub fn serve_blocking(config: ServeConfig) -> Result<(), TeleopError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| TeleopError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let server = start(config).await?;
        eprintln!("teleop service listening on http://{}/ (websocket /session)", server.addr);
        server.wait().await
    })
}
