//! Binary PPM (P6) heatmaps of log velocity magnitude.
//!
//! Each pixel shows `lg(max(√(u²+v²), 1e-6))`, clamped to `[lo, hi]` and
//! mapped linearly onto a five-stop ramp:
//!
//! | position | colour  | RGB           |
//! |----------|---------|---------------|
//! | 0.00     | navy    | (0, 0, 64)    |
//! | 0.25     | blue    | (0, 64, 255)  |
//! | 0.50     | cyan    | (0, 224, 224) |
//! | 0.75     | yellow  | (255, 224, 0) |
//! | 1.00     | red     | (192, 0, 0)   |

use crate::data::VolumeSequence;
use crate::error::{Error, Result};

pub const MAGNITUDE_FLOOR: f64 = 1e-6;
pub const DEFAULT_LO: f64 = -3.0;
pub const DEFAULT_HI: f64 = 0.5;

const RAMP: [[f64; 3]; 5] = [
    [0.0, 0.0, 64.0],
    [0.0, 64.0, 255.0],
    [0.0, 224.0, 224.0],
    [255.0, 224.0, 0.0],
    [192.0, 0.0, 0.0],
];

pub fn log_magnitude(u: f64, v: f64) -> f64 {
    (u * u + v * v).sqrt().max(MAGNITUDE_FLOOR).log10()
}

/// Ramp colour at position `x ∈ [0, 1]` (clamped).
pub fn ramp(x: f64) -> [u8; 3] {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    let pos = x * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8;
    }
    out
}

/// Renders one `(frame, depth)` slice of a physical two-channel sequence.
/// Row 0 of the image is grid row 0.
pub fn render_ppm(seq: &VolumeSequence, frame: usize, depth: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if seq.is_pc_space() {
        return Err(Error::contract("render needs a physical-space sequence"));
    }
    let [t, d, h, w, c] = seq.dims();
    if c != 2 {
        return Err(Error::shape(format!("render needs u, v channels, found {c}")));
    }
    if frame >= t {
        return Err(Error::config(format!("frame {frame} out of range 0..{t}")));
    }
    if depth >= d {
        return Err(Error::config(format!("depth {depth} out of range 0..{d}")));
    }
    if !(hi > lo) {
        return Err(Error::config(format!("colour range [{lo}, {hi}] is empty")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let base = (frame * d + depth) * h * w * c;
    let data = seq.data.data();
    for k in 0..h * w {
        let u = data[base + k * c] as f64;
        let v = data[base + k * c + 1] as f64;
        out.extend_from_slice(&ramp((log_magnitude(u, v) - lo) / (hi - lo)));
    }
    Ok(out)
}
