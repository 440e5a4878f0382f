#![doc = include_str!("../PROTOCOL.md")]

use nalgebra::Vector3;
use rangeavoid::{PredictionTrace, RangeImage, VelocityCommand};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
/// Factor by which both image axes are reduced on the wire.
pub const IMAGE_DOWNSAMPLE: usize = 4;
pub const MAX_SPEED_MULTIPLIER: f64 = 16.0;

/// Versioned frame: `{"v": 1, "type": ..., ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub v: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn to_json(body: T) -> String {
        serde_json::to_string(&Envelope {
            v: PROTOCOL_VERSION,
            body,
        })
        .expect("message types always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    StateUpdate(Box<StateUpdate>),
    Status(Status),
    Error(ErrorFrame),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub scenario: String,
    pub dt: f64,
    pub v_max: f64,
    pub stale_after: f64,
    pub image_downsample: usize,
    pub scenarios: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub stop_reason: String,
    pub t_stop: f64,
    pub t_contact: f64,
    /// Predicted positions, world frame, one per step.
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub width: usize,
    pub height: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub ranges: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub episode: u64,
    pub tick: u64,
    pub t: f64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub target: [f64; 3],
    pub command: [f64; 3],
    pub regime: String,
    pub d_near: Option<f64>,
    pub d_true: Option<f64>,
    pub trace: Option<TraceSummary>,
    pub range_image: WireImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub scenario: String,
    pub episode: u64,
    pub tick: u64,
    pub paused: bool,
    pub speed: f64,
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    InvalidValue,
    ControlFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorFrame {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        Envelope::to_json(ServerMessage::Error(self.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    CommandInput {
        velocity: [f64; 3],
        #[serde(default)]
        timestamp: f64,
    },
    ScenarioControl(Control),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Control {
    Load { scenario: String },
    Pause,
    Resume,
    Reset,
    Speed { multiplier: f64 },
}

/// Parses and validates one client frame.
pub fn parse_client(text: &str) -> Result<ClientMessage, ErrorFrame> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ErrorFrame::new(ErrorCode::Malformed, e.to_string()))?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => {
            return Err(ErrorFrame::new(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {v} is not supported, expected {PROTOCOL_VERSION}"),
            ))
        }
        None => {
            return Err(ErrorFrame::new(
                ErrorCode::UnsupportedVersion,
                "missing numeric protocol version `v`",
            ))
        }
    }
    let msg: ClientMessage =
        serde_json::from_value(value).map_err(|e| ErrorFrame::new(ErrorCode::Malformed, e.to_string()))?;
    match &msg {
        ClientMessage::CommandInput { velocity, .. } if !velocity.iter().all(|c| c.is_finite()) => {
            Err(ErrorFrame::new(ErrorCode::InvalidValue, "velocity must be finite"))
        }
        ClientMessage::ScenarioControl(Control::Speed { multiplier })
            if !(*multiplier > 0.0 && *multiplier <= MAX_SPEED_MULTIPLIER) =>
        {
            Err(ErrorFrame::new(
                ErrorCode::InvalidValue,
                format!("speed multiplier must be in (0, {MAX_SPEED_MULTIPLIER}]"),
            ))
        }
        ClientMessage::ScenarioControl(Control::Load { scenario }) if !is_scenario_name(scenario) => Err(
            ErrorFrame::new(ErrorCode::InvalidValue, format!("`{scenario}` is not a scenario name")),
        ),
        _ => Ok(msg),
    }
}

/// Letters, digits, `_` and `-` only, so a name can never leave the
/// scenario directory.
pub fn is_scenario_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Minimum valid range per `factor × factor` block, `0` for empty blocks.
/// Partial blocks at the edges are kept.
pub fn downsample(img: &RangeImage, factor: usize) -> WireImage {
    let g = img.geometry();
    let factor = factor.max(1);
    let (w, h) = (g.width.div_ceil(factor), g.height.div_ceil(factor));
    let mut out = vec![f32::INFINITY; w * h];
    for (i, r, _) in img.valid() {
        let px = g.pixel_at(i);
        let cell = &mut out[(px.row / factor) * w + px.col / factor];
        *cell = cell.min(r as f32);
    }
    for v in &mut out {
        if v.is_infinite() {
            *v = 0.0;
        }
    }
    WireImage {
        width: w,
        height: h,
        theta_min: g.theta_min,
        theta_max: g.theta_max,
        ranges: out,
    }
}

pub fn summarize_trace(trace: &PredictionTrace, origin: &Vector3<f64>, t_contact: f64) -> TraceSummary {
    TraceSummary {
        stop_reason: trace.stop_reason.as_str().to_string(),
        t_stop: trace.t_stop,
        t_contact,
        points: trace.steps.iter().map(|s| (origin + s.position).into()).collect(),
    }
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub(crate) fn arr(v: &VelocityCommand) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rangeavoid::{ImageGeometry, Pixel};

    #[test]
    fn client_frames_parse() {
        let m = parse_client(r#"{"v":1,"type":"command_input","velocity":[3,0,0],"timestamp":1.5}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::CommandInput {
                velocity: [3.0, 0.0, 0.0],
                timestamp: 1.5
            }
        );
        let m = parse_client(r#"{"v":1,"type":"scenario_control","action":"speed","multiplier":2}"#).unwrap();
        assert_eq!(m, ClientMessage::ScenarioControl(Control::Speed { multiplier: 2.0 }));
        let m = parse_client(r#"{"type":"scenario_control","action":"reset","v":1,"extra":true}"#).unwrap();
        assert_eq!(m, ClientMessage::ScenarioControl(Control::Reset));
    }

    #[test]
    fn bad_frames_are_classified() {
        let code = |s: &str| parse_client(s).unwrap_err().code;
        assert_eq!(code("{not json"), ErrorCode::Malformed);
        assert_eq!(code(r#"{"type":"command_input","velocity":[1,0,0]}"#), ErrorCode::UnsupportedVersion);
        assert_eq!(code(r#"{"v":2,"type":"command_input","velocity":[1,0,0]}"#), ErrorCode::UnsupportedVersion);
        assert_eq!(code(r#"{"v":1,"type":"fly_faster"}"#), ErrorCode::Malformed);
        assert_eq!(code(r#"{"v":1,"type":"command_input","velocity":[1,0]}"#), ErrorCode::Malformed);
        assert_eq!(code(r#"{"v":1,"type":"command_input","velocity":[1e999,0,0]}"#), ErrorCode::Malformed);
        assert_eq!(
            code(r#"{"v":1,"type":"scenario_control","action":"speed","multiplier":0}"#),
            ErrorCode::InvalidValue
        );
        assert_eq!(
            code(r#"{"v":1,"type":"scenario_control","action":"load","scenario":"../etc/passwd"}"#),
            ErrorCode::InvalidValue
        );
    }

    #[test]
    fn server_frames_carry_version_and_tag() {
        let s = ErrorFrame::new(ErrorCode::Malformed, "bad").to_json();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["type"], "error");
        assert_eq!(v["code"], "malformed");

        let status = Envelope::to_json(ServerMessage::Status(Status {
            scenario: "gap".into(),
            episode: 2,
            tick: 7,
            paused: true,
            speed: 1.0,
            outcome: None,
        }));
        let back: Envelope<ServerMessage> = serde_json::from_str(&status).unwrap();
        assert_eq!(back.v, PROTOCOL_VERSION);
        assert!(matches!(back.body, ServerMessage::Status(Status { episode: 2, paused: true, .. })));
    }

    #[test]
    fn downsample_keeps_block_minimum() {
        let g = ImageGeometry::new(10, 6, -0.5, 0.5).unwrap();
        let mut img = RangeImage::invalid(g);
        img.set(Pixel::new(1, 1), 5.0, 0.0).unwrap();
        img.set(Pixel::new(2, 3), 4.0, 0.0).unwrap();
        img.set(Pixel::new(9, 5), 7.5, 0.0).unwrap();
        let w = downsample(&img, 4);
        assert_eq!((w.width, w.height), (3, 2));
        assert_eq!(w.ranges, vec![4.0, 0.0, 0.0, 0.0, 0.0, 7.5]);
    }
}
