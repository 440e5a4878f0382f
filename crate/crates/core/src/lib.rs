//! Reactive obstacle avoidance for multirotor UAVs operating directly on
//! LiDAR range images.
//!
//! The engine takes a target velocity command and returns an adjusted one:
//!
//! 1. incoming scans are pruned to the reachable region and aggregated into a
//!    short-lived history range image ([`scan_history`]),
//! 2. angular repulsive forces computed on that image pick the flight
//!    direction ([`angular_field`]), with a Cartesian push force taking over
//!    close to obstacles ([`push_blend`]),
//! 3. the closed-loop future is unrolled and the command is scaled by the
//!    predicted time-to-contact ([`predictor`]).
//!
//! [`Avoider`] wires these stages into a per-scan controller. A classic
//! two-sphere Cartesian potential field is available as a comparison
//! baseline in [`baseline_pf`].
//!
//! ```
//! use nalgebra::Vector3;
//! use rangeavoid::{AvoidanceParams, Avoider, Method, RangeImage, RigidMotion};
//!
//! let params = AvoidanceParams::default();
//! let mut avoider = Avoider::new(params.clone(), Method::Angular, 3.0).unwrap();
//! let scan = RangeImage::invalid(params.geometry);
//! let out = avoider
//!     .tick(&scan, &RigidMotion::identity(), Vector3::zeros(), Vector3::new(3.0, 0.0, 0.0), 0.0)
//!     .unwrap();
//! assert!((out.command - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-9);
//! ```

pub mod angular_field;
pub mod avoider;
pub mod baseline_pf;
mod error;
pub mod params;
pub mod predictor;
pub mod push_blend;
pub mod range_image;
pub mod scan_history;
pub mod snapshot;
pub mod steering;

pub use angular_field::{AngularForce, DirectionResult};
pub use avoider::{Avoider, Method, TickOutput};
pub use baseline_pf::SpherePfParams;
pub use error::AvoidError;
pub use params::{AvoidanceParams, SupportMetric};
pub use predictor::{PredictionTrace, StopReason};
pub use push_blend::{PushForce, Regime, RegimeDecision};
pub use range_image::{ImageGeometry, Pixel, RangeImage, RigidMotion, INVALID_RANGE};
pub use scan_history::HistoryState;

/// Velocity command in the sensor/body frame, m/s.
pub type VelocityCommand = nalgebra::Vector3<f64>;

pub type Result<T, E = AvoidError> = std::result::Result<T, E>;
