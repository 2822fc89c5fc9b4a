//! Discrete PDE operators and the latent-state physics residuals.
//!
//! The Laplacian is the 5-point stencil with replicate-edge boundaries: an
//! out-of-range neighbour takes the value of the centre cell, which gives a
//! zero normal gradient at the walls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhysicsKind {
    None,
    Diffusion,
    Wave,
}

/// Physics constraint of one recurrent layer. The coefficient (α for
/// diffusion, c² for wave) is a learnable scalar stored as a softplus
/// pre-activation, so these fields are only its initial value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsSpec {
    pub kind: PhysicsKind,
    pub alpha: f64,
    pub c_squared: f64,
    pub lambda: f64,
}

impl Default for PhysicsSpec {
    fn default() -> Self {
        PhysicsSpec {
            kind: PhysicsKind::None,
            alpha: 0.1,
            c_squared: 0.1,
            lambda: 0.1,
        }
    }
}

impl PhysicsSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn diffusion() -> Self {
        PhysicsSpec {
            kind: PhysicsKind::Diffusion,
            ..Self::default()
        }
    }

    pub fn wave() -> Self {
        PhysicsSpec {
            kind: PhysicsKind::Wave,
            ..Self::default()
        }
    }

    /// Initial value of the learnable coefficient, if the kind has one.
    pub fn initial_coefficient(&self) -> Option<f64> {
        match self.kind {
            PhysicsKind::None => None,
            PhysicsKind::Diffusion => Some(self.alpha),
            PhysicsKind::Wave => Some(self.c_squared),
        }
    }
}

/// 5-point Laplacian of each channel of an `H×W×C` field.
pub fn laplacian<F: Real>(field: &Tensor<F>) -> Result<Tensor<F>> {
    let (h, w) = field.spatial()?;
    let c = field.channels();
    let v = field.data();
    let four = F::of(4.0);
    let mut out = vec![F::zero(); v.len()];
    for i in 0..h {
        let up = i.saturating_sub(1);
        let down = (i + 1).min(h - 1);
        for j in 0..w {
            let left = j.saturating_sub(1);
            let right = (j + 1).min(w - 1);
            let at = |r: usize, col: usize| (r * w + col) * c;
            let (ctr, u, d, l, r) = (at(i, j), at(up, j), at(down, j), at(i, left), at(i, right));
            for ch in 0..c {
                out[ctr + ch] = v[u + ch] + v[d + ch] + v[l + ch] + v[r + ch] - four * v[ctr + ch];
            }
        }
    }
    Tensor::new(field.shape(), out)
}

/// One explicit-Euler diffusion update `v + α Δv`.
pub fn diffusion_step<F: Real>(v: &Tensor<F>, alpha: F) -> Result<Tensor<F>> {
    if alpha < F::zero() {
        return Err(Error::config(format!("diffusivity must be >= 0, got {alpha}")));
    }
    v.add(&laplacian(v)?.scale(alpha))
}

/// Leapfrog wave update `2v − v_prev + c² Δv`.
pub fn wave_step<F: Real>(v: &Tensor<F>, v_prev: &Tensor<F>, c2: F) -> Result<Tensor<F>> {
    v.check_same_shape(v_prev)?;
    let lap = laplacian(v)?;
    let two = F::of(2.0);
    let data = v
        .data()
        .iter()
        .zip(v_prev.data())
        .zip(lap.data())
        .map(|((&a, &p), &l)| two * a - p + c2 * l)
        .collect();
    Tensor::new(v.shape(), data)
}

fn mean_square<F: Real>(r: &Tensor<F>) -> F {
    r.data().iter().map(|&x| x * x).sum::<F>() / F::of(r.len() as f64)
}

/// Mean-square diffusion residual `‖h̃ − h − α Δh‖² / N`.
pub fn g_dif<F: Real>(h: &Tensor<F>, h_tilde: &Tensor<F>, alpha: F) -> Result<F> {
    h.check_same_shape(h_tilde)?;
    let r = h_tilde.sub(h)?.sub(&laplacian(h)?.scale(alpha))?;
    Ok(mean_square(&r))
}

/// Mean-square wave residual `‖h_next − 2h + h_prev − c² Δh‖² / N`.
pub fn g_wave<F: Real>(h_prev: &Tensor<F>, h: &Tensor<F>, h_next: &Tensor<F>, c2: F) -> Result<F> {
    h.check_same_shape(h_prev)?;
    h.check_same_shape(h_next)?;
    let r = h_next.sub(&wave_step(h, h_prev, c2)?)?;
    Ok(mean_square(&r))
}

/// [`g_dif`] recorded on a tape; `alpha` is a one-element node.
pub fn g_dif_var<F: Real>(tape: &Tape<F>, h: Var, h_tilde: Var, alpha: Var) -> Result<Var> {
    let lap = tape.laplacian(h)?;
    let diff = tape.scalar_mul(alpha, lap)?;
    let step = tape.add(h, diff)?;
    tape.mse(h_tilde, step)
}

/// [`g_wave`] recorded on a tape; `c2` is a one-element node.
pub fn g_wave_var<F: Real>(tape: &Tape<F>, h_prev: Var, h: Var, h_next: Var, c2: Var) -> Result<Var> {
    let lap = tape.laplacian(h)?;
    let prop = tape.scalar_mul(c2, lap)?;
    let twice = tape.scale(h, F::of(2.0))?;
    let a = tape.sub(h_next, twice)?;
    let b = tape.add(a, h_prev)?;
    let r = tape.sub(b, prop)?;
    tape.mean_square(r)
}

/// Physics residual of one time step over the `m` intermediate maps.
///
/// Diffusion pairs each map with its updated version. Wave treats the order
/// index as a micro-time axis: order `o` contributes
/// `g_wave(H^o, H̃^o, H̃^{o+1})` for `o < m`. Returns `None` when there is
/// nothing to accumulate (kind none, or wave with a single order).
pub fn step_residual<F: Real>(
    tape: &Tape<F>,
    kind: PhysicsKind,
    coefficient: Option<Var>,
    maps: &[Var],
    tilde: &[Var],
) -> Result<Option<Var>> {
    if maps.len() != tilde.len() {
        return Err(Error::shape(format!(
            "{} intermediate maps but {} updated maps",
            maps.len(),
            tilde.len()
        )));
    }
    let need_coef = || coefficient.ok_or_else(|| Error::contract("physics kind needs a coefficient"));
    let terms = match kind {
        PhysicsKind::None => return Ok(None),
        PhysicsKind::Diffusion => {
            let alpha = need_coef()?;
            maps.iter()
                .zip(tilde)
                .map(|(&h, &ht)| g_dif_var(tape, h, ht, alpha))
                .collect::<Result<Vec<_>>>()?
        }
        PhysicsKind::Wave => {
            let c2 = need_coef()?;
            (0..maps.len().saturating_sub(1))
                .map(|o| g_wave_var(tape, maps[o], tilde[o], tilde[o + 1], c2))
                .collect::<Result<Vec<_>>>()?
        }
    };
    if terms.is_empty() {
        return Ok(None);
    }
    tape.add_n(&terms).map(Some)
}

/// Intermediate maps of one time step: `H^{(t,o)}` before and `H̃^{(t,o)}`
/// after the physics update, for `o = 1..m`.
#[derive(Clone, Debug)]
pub struct StepMaps<F> {
    pub maps: Vec<Tensor<F>>,
    pub tilde: Vec<Tensor<F>>,
}

/// Unweighted physics loss summed over time steps and orders.
pub fn sequence_physics_loss<F: Real>(history: &[StepMaps<F>], kind: PhysicsKind, coefficient: F) -> Result<F> {
    if kind == PhysicsKind::None {
        return Err(Error::contract("sequence_physics_loss called with kind none"));
    }
    let mut total = F::zero();
    for step in history {
        if step.maps.len() != step.tilde.len() {
            return Err(Error::shape("maps and updated maps differ in count"));
        }
        match kind {
            PhysicsKind::Diffusion => {
                for (h, ht) in step.maps.iter().zip(&step.tilde) {
                    total += g_dif(h, ht, coefficient)?;
                }
            }
            PhysicsKind::Wave => {
                for o in 0..step.maps.len().saturating_sub(1) {
                    total += g_wave(&step.maps[o], &step.tilde[o], &step.tilde[o + 1], coefficient)?;
                }
            }
            PhysicsKind::None => unreachable!(),
        }
    }
    Ok(total)
}
