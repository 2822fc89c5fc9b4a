//! Synthetic velocity fields integrated from the diffusion and wave equations.
//!
//! Each depth layer evolves independently from a seeded smooth initial
//! condition: a sum of low-wavenumber sinusoids. Channel 0 uses
//! `cos(θ_k + φ_k)` terms and channel 1 the same terms shifted by 90°.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::VolumeSequence;
use crate::error::{Error, Result};
use crate::physics::{diffusion_step, laplacian, wave_step};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Diffusion,
    Wave,
    /// Even depth layers diffuse, odd layers carry waves.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Diffusivity in grid-units² per step.
    pub alpha: f64,
    /// Squared wave speed in grid-units² per step².
    pub c2: f64,
    /// Highest wavenumber in the initial condition.
    pub modes: usize,
    /// Peak amplitude of the initial field (m/s).
    pub amplitude: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            alpha: 0.1,
            c2: 0.2,
            modes: 3,
            amplitude: 0.5,
        }
    }
}

pub const MAX_ALPHA: f64 = 0.25;
pub const MAX_C2: f64 = 0.5;

impl SyntheticParams {
    fn check(&self, kind: SyntheticKind) -> Result<()> {
        let diffuses = matches!(kind, SyntheticKind::Diffusion | SyntheticKind::Mixed);
        let waves = matches!(kind, SyntheticKind::Wave | SyntheticKind::Mixed);
        if diffuses && !(0.0..=MAX_ALPHA).contains(&self.alpha) {
            return Err(Error::config(format!(
                "unstable diffusion: alpha = {} violates 0 <= alpha <= {MAX_ALPHA}",
                self.alpha
            )));
        }
        if waves && !(self.c2 >= 0.0 && 2.0 * self.c2 <= 1.0) {
            return Err(Error::config(format!(
                "unstable wave: c2 = {} violates 2·c2 <= 1 (c2 <= {MAX_C2})",
                self.c2
            )));
        }
        if self.modes == 0 {
            return Err(Error::config("modes must be >= 1"));
        }
        Ok(())
    }
}

/// Explicit-Euler diffusion trajectory of `steps` frames starting at `v0`.
pub fn integrate_diffusion(v0: &Tensor<f64>, alpha: f64, steps: usize) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(steps);
    let mut v = v0.clone();
    for _ in 0..steps {
        out.push(v.clone());
        v = diffusion_step(&v, alpha)?;
    }
    Ok(out)
}

/// Leapfrog wave trajectory of `steps` frames starting at `v0`, with `v_prev`
/// the frame before it.
pub fn integrate_wave(v0: &Tensor<f64>, v_prev: &Tensor<f64>, c2: f64, steps: usize) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(steps);
    let (mut prev, mut v) = (v_prev.clone(), v0.clone());
    for _ in 0..steps {
        out.push(v.clone());
        let next = wave_step(&v, &prev, c2)?;
        prev = std::mem::replace(&mut v, next);
    }
    Ok(out)
}

/// Discrete energy conserved by the leapfrog scheme between frames `v` and
/// `v_next`: `‖v_next − v‖² + c² ⟨v_next, −Δ v⟩`.
pub fn wave_energy(v: &Tensor<f64>, v_next: &Tensor<f64>, c2: f64) -> Result<f64> {
    let kinetic = v_next.sub(v)?.data().iter().map(|d| d * d).sum::<f64>();
    let lap = laplacian(v)?;
    let potential = -v_next.data().iter().zip(lap.data()).map(|(a, b)| a * b).sum::<f64>();
    Ok(kinetic + c2 * potential)
}

struct Mode {
    ky: f64,
    kx: f64,
    amp: f64,
    phase: f64,
}

fn random_modes(rng: &mut ChaCha8Rng, modes: usize) -> Vec<Mode> {
    let mut out = Vec::new();
    for ky in 0..=modes {
        for kx in 0..=modes {
            if kx == 0 && ky == 0 {
                continue;
            }
            let amp = rng.random_range(-1.0..1.0) / (1.0 + (kx + ky) as f64);
            let phase = rng.random_range(0.0..2.0 * PI);
            out.push(Mode {
                ky: ky as f64,
                kx: kx as f64,
                amp,
                phase,
            });
        }
    }
    out
}

/// Field `H×W×2` from `modes`, each phase advanced by `shift(mode)`.
fn modal_field(modes: &[Mode], h: usize, w: usize, scale: f64, shift: impl Fn(&Mode) -> f64) -> Tensor<f64> {
    let yd = (h.max(2) - 1) as f64;
    let xd = (w.max(2) - 1) as f64;
    Tensor::from_fn(&[h, w, 2], |idx| {
        let ch = idx % 2;
        let j = (idx / 2) % w;
        let i = idx / 2 / w;
        let mut s = 0.0;
        for m in modes {
            let theta = PI * (m.ky * i as f64 / yd + m.kx * j as f64 / xd) + m.phase + shift(m);
            s += m.amp * if ch == 0 { theta.cos() } else { theta.sin() };
        }
        s * scale
    })
}

/// Shifts each channel of `v` to the spatial mean of `target`. The leapfrog
/// scheme carries the mean difference forward as a constant velocity, so
/// unequal means would make the field drift without bound.
fn match_channel_means(v: &Tensor<f64>, target: &Tensor<f64>) -> Tensor<f64> {
    let c = v.channels();
    let n = (v.len() / c) as f64;
    let means = |t: &Tensor<f64>| {
        let mut m = vec![0.0; c];
        for px in t.data().chunks_exact(c) {
            for (a, b) in m.iter_mut().zip(px) {
                *a += b;
            }
        }
        m.into_iter().map(|a| a / n).collect::<Vec<_>>()
    };
    let (have, want) = (means(v), means(target));
    Tensor::from_fn(v.shape(), |i| v.data()[i] + want[i % c] - have[i % c])
}

/// Generates a `T×D×H×W×2` sequence sampled every 12 hours.
pub fn generate_synthetic(
    kind: SyntheticKind,
    t: usize,
    d: usize,
    h: usize,
    w: usize,
    params: &SyntheticParams,
    seed: u64,
) -> Result<VolumeSequence> {
    params.check(kind)?;
    if t == 0 || d == 0 || h == 0 || w == 0 {
        return Err(Error::config(format!("shape {t}×{d}×{h}×{w} has an empty axis")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = h * w * 2;
    let mut data = vec![0.0f32; t * d * frame];
    for layer in 0..d {
        let modes = random_modes(&mut rng, params.modes);
        let peak = modal_field(&modes, h, w, 1.0, |_| 0.0)
            .data()
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1e-12);
        let scale = params.amplitude / peak;
        let v0 = modal_field(&modes, h, w, scale, |_| 0.0);
        let diffuses = match kind {
            SyntheticKind::Diffusion => true,
            SyntheticKind::Wave => false,
            SyntheticKind::Mixed => layer % 2 == 0,
        };
        let traj = if diffuses {
            integrate_diffusion(&v0, params.alpha, t)?
        } else {
            // Back-date each mode by its continuum angular frequency so the
            // initial condition travels rather than standing still.
            let c = params.c2.sqrt();
            let (yd, xd) = ((h.max(2) - 1) as f64, (w.max(2) - 1) as f64);
            let v_prev = modal_field(&modes, h, w, scale, |m| {
                c * PI * ((m.ky / yd).powi(2) + (m.kx / xd).powi(2)).sqrt()
            });
            integrate_wave(&v0, &match_channel_means(&v_prev, &v0), params.c2, t)?
        };
        for (ti, f) in traj.iter().enumerate() {
            let base = (ti * d + layer) * frame;
            for (dst, &src) in data[base..base + frame].iter_mut().zip(f.data()) {
                *dst = src as f32;
            }
        }
    }
    VolumeSequence::new(Tensor::new(&[t, d, h, w, 2], data)?, 12.0)
}
