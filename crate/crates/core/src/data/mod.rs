//! Volume sequences, splitting, normalization and synthetic fields.

mod synthetic;
mod vseq;

pub use synthetic::{generate_synthetic, integrate_diffusion, integrate_wave, wave_energy, SyntheticKind, SyntheticParams};
pub use vseq::{load, read_vseq, save, write_vseq, ByteOrder, VseqHeader, VSEQ_MAGIC, VSEQ_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Axis names of a physical `T×D×H×W×C` sequence.
pub const PHYSICAL_AXES: [&str; 5] = ["time", "depth", "lat", "lon", "channel"];
/// Axis names of a PC-space sequence stored as `T×D×P×1×C`.
pub const PC_AXES: [&str; 5] = ["time", "depth", "pc", "unit", "channel"];

/// `T×D×H×W×C` sequence of gridded fields (channels are velocity u, v).
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSequence {
    pub data: Tensor<f32>,
    pub time_step_hours: f64,
    pub axes: Vec<String>,
}

impl VolumeSequence {
    pub fn new(data: Tensor<f32>, time_step_hours: f64) -> Result<Self> {
        Self::with_axes(data, time_step_hours, PHYSICAL_AXES.iter().map(|s| s.to_string()).collect())
    }

    pub fn with_axes(data: Tensor<f32>, time_step_hours: f64, axes: Vec<String>) -> Result<Self> {
        if data.rank() != 5 {
            return Err(Error::shape(format!(
                "volume sequence must be T×D×H×W×C, got {:?}",
                data.shape()
            )));
        }
        if axes.len() != 5 {
            return Err(Error::shape(format!("expected 5 axis names, got {}", axes.len())));
        }
        if !data.all_finite() {
            return Err(Error::Numeric("volume sequence contains non-finite values".into()));
        }
        Ok(VolumeSequence {
            data,
            time_step_hours,
            axes,
        })
    }

    pub fn dims(&self) -> [usize; 5] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3], s[4]]
    }

    pub fn len(&self) -> usize {
        self.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_pc_space(&self) -> bool {
        self.axes.get(2).is_some_and(|a| a == "pc")
    }

    /// Frames `[start, end)` along time.
    pub fn time_slice(&self, start: usize, end: usize) -> Result<Self> {
        let [t, d, h, w, c] = self.dims();
        if start >= end || end > t {
            return Err(Error::shape(format!("time range {start}..{end} outside 0..{t}")));
        }
        let frame = d * h * w * c;
        let data = self.data.data()[start * frame..end * frame].to_vec();
        Ok(VolumeSequence {
            data: Tensor::new(&[end - start, d, h, w, c], data)?,
            time_step_hours: self.time_step_hours,
            axes: self.axes.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    /// Frames per training window (context + target).
    pub window: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            window: 20,
        }
    }
}

impl SplitSpec {
    /// First validation index: `floor(train_fraction · T)`.
    pub fn boundary(&self, t: usize) -> Result<usize> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let cut = (t as f64 * self.train_fraction + 1e-9).floor() as usize;
        if cut < self.window || t - cut < self.window {
            return Err(Error::config(format!(
                "series of {t} frames splits into {cut}/{} but each side needs at least {} frames",
                t - cut,
                self.window
            )));
        }
        Ok(cut)
    }
}

/// Contiguous prefix/suffix split.
pub fn split(seq: &VolumeSequence, spec: &SplitSpec) -> Result<(VolumeSequence, VolumeSequence)> {
    let cut = spec.boundary(seq.len())?;
    Ok((seq.time_slice(0, cut)?, seq.time_slice(cut, seq.len())?))
}

/// Start indices of stride-1 windows of `window` frames inside `len` frames.
pub fn window_starts(len: usize, window: usize) -> Vec<usize> {
    if len < window {
        return Vec::new();
    }
    (0..=len - window).collect()
}

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero and fell back to unit scale.
    pub unit_fallback: Vec<bool>,
}

impl NormStats {
    /// Statistics of the last axis of `t` (use the training split only).
    pub fn fit<F: Real>(t: &Tensor<F>) -> Self {
        let c = t.channels();
        let n = (t.len() / c) as f64;
        let mut mean = vec![0.0; c];
        for px in t.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(px) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for px in t.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
                let d = v.as_f64() - m;
                *s += d * d;
            }
        }
        let mut std = Vec::with_capacity(c);
        let mut unit_fallback = Vec::with_capacity(c);
        for (ch, s) in var.iter().enumerate() {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                std.push(sd);
                unit_fallback.push(false);
            } else {
                log::warn!("channel {ch} has zero variance; normalizing with unit scale");
                std.push(1.0);
                unit_fallback.push(true);
            }
        }
        NormStats {
            mean,
            std,
            unit_fallback,
        }
    }

    pub fn normalize<F: Real>(&self, t: &Tensor<F>) -> Result<Tensor<F>> {
        self.transform(t, |v, m, s| (v - m) / s)
    }

    pub fn denormalize<F: Real>(&self, t: &Tensor<F>) -> Result<Tensor<F>> {
        self.transform(t, |v, m, s| v * s + m)
    }

    fn transform<F: Real>(&self, t: &Tensor<F>, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor<F>> {
        let c = t.channels();
        if c != self.mean.len() {
            return Err(Error::shape(format!(
                "tensor has {c} channels, statistics cover {}",
                self.mean.len()
            )));
        }
        let mut out = t.clone();
        for px in out.data_mut().chunks_exact_mut(c) {
            for (ch, v) in px.iter_mut().enumerate() {
                *v = F::of(f(v.as_f64(), self.mean[ch], self.std[ch]));
            }
        }
        Ok(out)
    }
}

/// Normalizes a sequence with statistics fitted on itself.
pub fn normalize<F: Real>(t: &Tensor<F>) -> Result<(Tensor<F>, NormStats)> {
    let stats = NormStats::fit(t);
    Ok((stats.normalize(t)?, stats))
}

pub fn denormalize<F: Real>(t: &Tensor<F>, stats: &NormStats) -> Result<Tensor<F>> {
    stats.denormalize(t)
}
