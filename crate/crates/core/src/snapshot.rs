//! Binary range-image snapshots for fixtures.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `RIMG`                  |
//! | 4      | 4    | version, `u32` = 1            |
//! | 8      | 4    | width, `u32`                  |
//! | 12     | 4    | height, `u32`                 |
//! | 16     | 8    | θ_min, `f64`                  |
//! | 24     | 8    | θ_max, `f64`                  |
//! | 32     | 8·N  | ranges, `f64`, row-major      |
//! | 32+8N  | 8·N  | ages, `f64`, row-major        |
//!
//! with `N = width · height`. Invalid pixels store `0.0`.

use std::path::Path;

use crate::range_image::{ImageGeometry, RangeImage};
use crate::{AvoidError, Result};

pub const MAGIC: &[u8; 4] = b"RIMG";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode(img: &RangeImage) -> Vec<u8> {
    let g = img.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&g.theta_min.to_le_bytes());
    out.extend_from_slice(&g.theta_max.to_le_bytes());
    for v in img.ranges().iter().chain(img.ages()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> AvoidError {
    AvoidError::Snapshot(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<RangeImage> {
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let geometry = ImageGeometry::new(u32_at(8) as usize, u32_at(12) as usize, f64_at(16), f64_at(24))?;
    let n = geometry.len();
    let expected = HEADER_LEN + 16 * n;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, got {}", bytes.len())));
    }
    let plane = |start: usize| -> Vec<f64> { (0..n).map(|i| f64_at(start + 8 * i)).collect() };
    RangeImage::from_parts(geometry, plane(HEADER_LEN), plane(HEADER_LEN + 8 * n))
}

pub fn write_file(path: impl AsRef<Path>, img: &RangeImage) -> Result<()> {
    std::fs::write(path.as_ref(), encode(img)).map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<RangeImage> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| bad(format!("{}: {e}", path.as_ref().display())))?;
    decode(&bytes)
}
