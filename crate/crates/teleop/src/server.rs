//! HTTP and WebSocket front end.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{mpsc, Arc};
use std::time::Instant;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use nalgebra::Vector3;
use rangeavoid_sim::Scenario;
use tokio::sync::{broadcast, oneshot};
use tower_http::services::ServeDir;

use crate::driver::{Driver, Mailbox, Request, Session, STALE_AFTER};
use crate::protocol::{
    parse_client, ClientMessage, Envelope, ErrorCode, ErrorFrame, Hello, ServerMessage, IMAGE_DOWNSAMPLE,
};
use crate::TeleopError;

const INDEX: &str = include_str!("index.html");
/// Frames buffered per client before a slow reader starts skipping.
const FRAME_BUFFER: usize = 64;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub scenario: Scenario,
    pub bind: SocketAddr,
    /// Directory `load` requests pick scenarios from.
    pub scenario_dir: PathBuf,
    /// Served at `/` instead of the built-in page when set.
    pub static_dir: Option<PathBuf>,
    pub speed: f64,
}

#[derive(Clone)]
struct App {
    mailbox: Arc<Mailbox>,
    frames: broadcast::Sender<Arc<str>>,
    requests: mpsc::Sender<Request>,
    scenario_dir: PathBuf,
    dt: f64,
}

/// A bound, running service. Dropping it stops the driver and the server.
pub struct RunningServer {
    pub addr: SocketAddr,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
    _driver: Driver,
}

impl RunningServer {
    /// Waits until the HTTP server exits.
    pub async fn wait(mut self) -> Result<(), TeleopError> {
        match (&mut self.task).await {
            Ok(r) => r.map_err(|e| TeleopError::Io(e.to_string())),
            Err(e) => Err(TeleopError::Io(e.to_string())),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Names of the `*.toml` scenarios in `dir`, sorted.
pub fn scenario_names(dir: &std::path::Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    names.sort();
    names
}

/// Binds `config.bind` and starts the driver. Fails when the port is taken
/// or the scenario is invalid.
pub async fn start(config: ServeConfig) -> Result<RunningServer, TeleopError> {
    if !(config.speed > 0.0 && config.speed <= crate::protocol::MAX_SPEED_MULTIPLIER) {
        return Err(TeleopError::Config(format!("speed multiplier {} out of range", config.speed)));
    }
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|e| TeleopError::Bind(format!("{}: {e}", config.bind)))?;
    let addr = listener.local_addr().map_err(|e| TeleopError::Io(e.to_string()))?;

    let dt = config.scenario.params.dt;
    let session = Session::new(config.scenario, config.speed)?;
    let mailbox = Arc::new(Mailbox::default());
    let (frames, _) = broadcast::channel(FRAME_BUFFER);
    let (driver, requests) = Driver::spawn(session, config.scenario_dir.clone(), mailbox.clone(), frames.clone());

    let app = App {
        mailbox,
        frames,
        requests,
        scenario_dir: config.scenario_dir,
        dt,
    };
    let mut router = Router::new().route("/session", get(upgrade));
    router = match config.static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router.route("/", get(|| async { Html(INDEX) })),
    };
    let router = router.with_state(app);
    let task = tokio::spawn(async move { axum::serve(listener, router).await });
    Ok(RunningServer {
        addr,
        task,
        _driver: driver,
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(app): State<App>) -> Response {
    ws.on_upgrade(move |socket| session(socket, app)).into_response()
}

async fn control(app: &App, c: crate::protocol::Control) -> Result<(), ErrorFrame> {
    let (tx, rx) = oneshot::channel();
    app.requests
        .send(Request::Control(c, tx))
        .map_err(|_| ErrorFrame::new(ErrorCode::ControlFailed, "simulation driver stopped"))?;
    match rx.await {
        Ok(Ok(())) => Ok(()),
        Ok(Err(msg)) => Err(ErrorFrame::new(ErrorCode::ControlFailed, msg)),
        Err(_) => Err(ErrorFrame::new(ErrorCode::ControlFailed, "simulation driver stopped")),
    }
}

/// Handles one client frame; returns a reply frame when there is one.
async fn handle(app: &App, text: &str) -> Option<String> {
    match parse_client(text) {
        Err(e) => Some(e.to_json()),
        Ok(ClientMessage::CommandInput { velocity, .. }) => {
            app.mailbox.post(Vector3::from(velocity), Instant::now());
            None
        }
        Ok(ClientMessage::ScenarioControl(c)) => control(app, c).await.err().map(|e| e.to_json()),
    }
}

async fn hello(app: &App) -> String {
    let (tx, rx) = oneshot::channel();
    let _ = app.requests.send(Request::Describe(tx));
    let (scenario, v_max) = rx.await.unwrap_or_else(|_| (String::new(), f64::NAN));
    Envelope::to_json(ServerMessage::Hello(Hello {
        scenario,
        dt: app.dt,
        v_max,
        stale_after: STALE_AFTER.as_secs_f64(),
        image_downsample: IMAGE_DOWNSAMPLE,
        scenarios: scenario_names(&app.scenario_dir),
    }))
}

async fn session(socket: WebSocket, app: App) {
    let (mut tx, mut rx) = socket.split();
    let mut frames = app.frames.subscribe();
    let greeting = hello(&app).await;
    if tx.send(Message::Text(greeting.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(text) => {
                    if tx.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                // a slow client skips frames rather than stalling the driver
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = rx.next() => {
                let reply = match incoming {
                    Some(Ok(Message::Text(t))) => handle(&app, t.as_str()).await,
                    Some(Ok(Message::Binary(_))) => {
                        Some(ErrorFrame::new(ErrorCode::Malformed, "expected a text frame").to_json())
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => None,
                };
                if let Some(r) = reply {
                    if tx.send(Message::Text(r.into())).await.is_err() {
                        break;
                    }
                }
            }
        }
    }
}
