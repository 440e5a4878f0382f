use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AvoidError {
    #[error("pixel ({col}, {row}) is outside the {width}x{height} image")]
    PixelOutOfBounds {
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("range must be positive, got {0}")]
    NonPositiveRange(f64),
    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("images have different geometry")]
    GeometryMismatch,
    #[error("time went backwards: {now} < {last}")]
    TimeWentBackwards { now: f64, last: f64 },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error("malformed prediction record: {0}")]
    Record(String),
}
