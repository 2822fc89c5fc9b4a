//! Frame-wise MSE and SSIM in PC space and physical space.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::VolumeSequence;
use crate::eof::{self, EofBasis};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("prediction {:?} vs truth {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse<F: Real>(pred: &Tensor<F>, truth: &Tensor<F>) -> Result<f64> {
    check_shapes(pred, truth)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(p, t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_per_frame<F: Real>(pred: &[Tensor<F>], truth: &[Tensor<F>]) -> Result<Vec<f64>> {
    check_horizon(pred.len(), truth.len())?;
    pred.iter().zip(truth).map(|(p, t)| mse(p, t)).collect()
}

fn check_horizon(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("prediction has {a} frames, truth has {b}")));
    }
    Ok(())
}

/// Normalized 1D Gaussian taps of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Largest odd window not exceeding `SSIM_WINDOW` or the smaller image side.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ssim {
    pub value: f64,
    pub window: usize,
    /// True when the window had to shrink below 11 to fit the image.
    pub shrunk: bool,
}

/// SSIM of frames shaped `[…, H, W, C]`: every leading index and channel is
/// scored as a separate `H×W` image and the results are averaged.
pub fn ssim<F: Real>(pred: &Tensor<F>, truth: &Tensor<F>, dynamic_range: f64) -> Result<Ssim> {
    check_shapes(pred, truth)?;
    let s = pred.shape();
    if s.len() < 3 {
        return Err(Error::shape(format!("SSIM needs at least H×W×C, got {s:?}")));
    }
    let (h, w, c) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let images = pred.len() / (h * w * c);
    let size = ssim_window_size(h, w);
    let win = gaussian_window(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let (a, b) = (pred.data(), truth.data());
    let mut total = 0.0;
    let mut x = vec![0.0; h * w];
    let mut y = vec![0.0; h * w];
    for img in 0..images {
        for ch in 0..c {
            for k in 0..h * w {
                let idx = (img * h * w + k) * c + ch;
                x[k] = a[idx].as_f64();
                y[k] = b[idx].as_f64();
            }
            total += ssim_plane(&x, &y, h, w, &win, c1, c2);
        }
    }
    Ok(Ssim {
        value: total / (images * c) as f64,
        window: size,
        shrunk: size < SSIM_WINDOW,
    })
}

/// Mean SSIM over all valid window positions of one plane. Every statistic
/// is computed with the same operation order for both arguments, so the
/// result is exactly symmetric and exactly 1 for identical planes.
fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, win: &[f64], c1: f64, c2: f64) -> f64 {
    let size = win.len();
    let (oh, ow) = (h - size + 1, w - size + 1);
    let mut acc = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my) = (0.0, 0.0);
            for (di, wi) in win.iter().enumerate() {
                for (dj, wj) in win.iter().enumerate() {
                    let k = (i + di) * w + j + dj;
                    let wt = wi * wj;
                    mx += wt * x[k];
                    my += wt * y[k];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (di, wi) in win.iter().enumerate() {
                for (dj, wj) in win.iter().enumerate() {
                    let k = (i + di) * w + j + dj;
                    let wt = wi * wj;
                    let (dx, dy) = (x[k] - mx, y[k] - my);
                    vx += wt * (dx * dx);
                    vy += wt * (dy * dy);
                    cxy += wt * (dx * dy);
                }
            }
            let num = (2.0 * (mx * my) + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            acc += if den == 0.0 { 1.0 } else { num / den };
        }
    }
    acc / (oh * ow) as f64
}

/// `max − min` of a series, or 1 when the series is constant.
pub fn dynamic_range<F: Real>(frames: &[Tensor<F>]) -> f64 {
    let (lo, hi) = frames
        .iter()
        .flat_map(|f| f.data())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.as_f64()), hi.max(v.as_f64()))
        });
    let r = hi - lo;
    if r.is_finite() && r > 0.0 {
        r
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Pc,
    Physical,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Pc => "pc",
            Space::Physical => "physical",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub space: Space,
    pub horizon: usize,
    pub mse: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_mse: f64,
    pub mean_ssim: f64,
    pub dynamic_range: f64,
    pub ssim_window: usize,
    pub ssim_window_shrunk: bool,
}

/// Scores a predicted series against the truth, frame by frame.
pub fn report<F: Real>(space: Space, pred: &[Tensor<F>], truth: &[Tensor<F>]) -> Result<EvalReport> {
    check_horizon(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(Error::contract("cannot evaluate an empty horizon"));
    }
    let l = dynamic_range(truth);
    let mse = mse_per_frame(pred, truth)?;
    let scores: Vec<Ssim> = pred.iter().zip(truth).map(|(p, t)| ssim(p, t, l)).collect::<Result<_>>()?;
    let n = pred.len() as f64;
    Ok(EvalReport {
        space,
        horizon: pred.len(),
        mean_mse: mse.iter().sum::<f64>() / n,
        mean_ssim: scores.iter().map(|s| s.value).sum::<f64>() / n,
        ssim: scores.iter().map(|s| s.value).collect(),
        mse,
        dynamic_range: l,
        ssim_window: scores[0].window,
        ssim_window_shrunk: scores[0].shrunk,
    })
}

/// Frames of a sequence: `D×P×C` images in PC space, `D×H×W×C` volumes in
/// physical space.
pub fn frames(seq: &VolumeSequence) -> Result<Vec<Tensor<f32>>> {
    let [t, d, h, w, c] = seq.dims();
    let shape: Vec<usize> = if seq.is_pc_space() { vec![d, h, c] } else { vec![d, h, w, c] };
    let n = d * h * w * c;
    let data = seq.data.data();
    (0..t).map(|i| Tensor::new(&shape, data[i * n..(i + 1) * n].to_vec())).collect()
}

/// Scores `pred` against `truth`. With a basis, both spaces are reported:
/// PC inputs are reconstructed, physical inputs are projected.
pub fn evaluate(
    pred: &VolumeSequence,
    truth: &VolumeSequence,
    basis: Option<&Arc<EofBasis>>,
) -> Result<Vec<EvalReport>> {
    check_horizon(pred.len(), truth.len())?;
    if pred.is_pc_space() != truth.is_pc_space() {
        return Err(Error::contract("prediction and truth are in different spaces"));
    }
    let own = if pred.is_pc_space() { Space::Pc } else { Space::Physical };
    let mut out = vec![report(own, &frames(pred)?, &frames(truth)?)?];
    if let Some(basis) = basis {
        let (p, t) = if pred.is_pc_space() {
            let to_physical = |s: &VolumeSequence| eof::reconstruct(&eof::pc_from_volume(s, Some(basis.clone()))?);
            (to_physical(pred)?, to_physical(truth)?)
        } else {
            let to_pc = |s: &VolumeSequence| eof::project(s, basis).map(|pc| eof::pc_to_volume(&pc));
            (to_pc(pred)?, to_pc(truth)?)
        };
        let other = if pred.is_pc_space() { Space::Physical } else { Space::Pc };
        out.push(report(other, &frames(&p)?, &frames(&t)?)?);
    }
    out.sort_by_key(|r| r.space == Space::Physical);
    Ok(out)
}

/// Writes the `frame,space,mse,ssim` report; frames are numbered from 1.
pub fn write_csv<W: Write>(reports: &[EvalReport], mut out: W) -> Result<()> {
    writeln!(out, "frame,space,mse,ssim")?;
    for r in reports {
        for (i, (m, s)) in r.mse.iter().zip(&r.ssim).enumerate() {
            writeln!(out, "{},{},{:e},{}", i + 1, r.space, m, s)?;
        }
    }
    Ok(())
}
