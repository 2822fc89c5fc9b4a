//! Recurrent cells: the first-order ConvLSTM and the higher-order
//! physics-informed tensor-train ConvLSTM.
//!
//! Gate channels are laid out `(I, F, C̃, O)` along the `4C` axis. Both cells
//! finish the gate pre-activations with the usual LSTM recurrence:
//!
//! ```text
//! memory = σ(F) ⊙ memory + σ(I) ⊙ tanh(C̃)
//! hidden = σ(O) ⊙ tanh(memory)
//! ```

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cttd;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::physics::{step_residual, PhysicsKind, PhysicsSpec};
use crate::tensor::{softplus_inverse, uniform_init, Real, Tape, Tensor, Var};

pub const FORGET_BIAS: f64 = 1.0;

fn gate_bias<F: Real>(c: usize) -> Tensor<F> {
    Tensor::from_fn(&[4 * c], |i| if (c..2 * c).contains(&i) { F::of(FORGET_BIAS) } else { F::zero() })
}

/// Splits `4C` gate pre-activations and advances the memory cell.
fn lstm_update<F: Real>(tape: &Tape<F>, gates: Var, memory: Var, c: usize) -> Result<(Var, Var)> {
    let i = tape.slice_channels(gates, 0, c)?;
    let f = tape.slice_channels(gates, c, c)?;
    let g = tape.slice_channels(gates, 2 * c, c)?;
    let o = tape.slice_channels(gates, 3 * c, c)?;
    let (i, f, g, o) = (tape.sigmoid(i)?, tape.sigmoid(f)?, tape.tanh(g)?, tape.sigmoid(o)?);
    let keep = tape.mul(f, memory)?;
    let write = tape.mul(i, g)?;
    let memory = tape.add(keep, write)?;
    let squashed = tape.tanh(memory)?;
    let hidden = tape.mul(o, squashed)?;
    Ok((hidden, memory))
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: Var,
    pub memory: Var,
}

/// First-order ConvLSTM cell.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub w_input: ParamId,
    pub t_hidden: ParamId,
    pub bias: ParamId,
}

impl ConvLstmCell {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_kernel(kernel)?;
        let (s, c, k) = (input_channels, hidden_channels, kernel);
        let w_input = store.add(format!("{prefix}.w_input"), uniform_init(&[k, k, s, 4 * c], k * k * s, rng));
        let t_hidden = store.add(format!("{prefix}.t_hidden"), uniform_init(&[k, k, c, 4 * c], k * k * c, rng));
        let bias = store.add(format!("{prefix}.bias"), gate_bias(c));
        Ok(ConvLstmCell {
            input_channels: s,
            hidden_channels: c,
            kernel: k,
            w_input,
            t_hidden,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        let (s, c, k) = (self.input_channels, self.hidden_channels, self.kernel);
        k * k * s * 4 * c + k * k * c * 4 * c + 4 * c
    }

    pub fn init_state<F: Real>(&self, tape: &Tape<F>, h: usize, w: usize) -> LstmState {
        LstmState {
            hidden: tape.zeros(&[h, w, self.hidden_channels]),
            memory: tape.zeros(&[h, w, self.hidden_channels]),
        }
    }

    pub fn step<F: Real>(&self, tape: &Tape<F>, params: &[Var], x: Var, state: &LstmState) -> Result<LstmState> {
        let from_input = tape.conv2d(x, params[self.w_input.index()], Some(params[self.bias.index()]))?;
        let from_hidden = tape.conv2d(state.hidden, params[self.t_hidden.index()], None)?;
        let gates = tape.add(from_input, from_hidden)?;
        let (hidden, memory) = lstm_update(tape, gates, state.memory, self.hidden_channels)?;
        Ok(LstmState { hidden, memory })
    }
}

/// Shape parameters of the higher-order cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PittConfig {
    /// Number of chain cores `m`.
    pub order: usize,
    /// Hidden-history length `n`.
    pub steps: usize,
    /// Rank `R` of the intermediate maps and chain interfaces.
    pub rank: usize,
    pub kernel: usize,
    pub physics: PhysicsSpec,
}

impl Default for PittConfig {
    fn default() -> Self {
        PittConfig {
            order: 3,
            steps: 3,
            rank: 8,
            kernel: 3,
            physics: PhysicsSpec::none(),
        }
    }
}

impl PittConfig {
    pub fn validate(&self) -> Result<()> {
        check_kernel(self.kernel)?;
        if self.order == 0 || self.rank == 0 {
            return Err(Error::config("order and rank must be >= 1"));
        }
        if self.order > self.steps {
            return Err(Error::config(format!(
                "order m = {} exceeds steps n = {}",
                self.order, self.steps
            )));
        }
        Ok(())
    }

    /// Time extent of each sliding window, `n − m + 1`.
    pub fn window(&self) -> usize {
        self.steps - self.order + 1
    }
}

#[derive(Clone, Debug)]
pub struct PittState {
    /// Previous hidden states, newest first; always `n` long.
    pub history: VecDeque<Var>,
    pub memory: Var,
}

/// Output of one higher-order step.
#[derive(Clone, Debug)]
pub struct PittStep {
    pub state: PittState,
    pub hidden: Var,
    /// Intermediate maps `H^{(t,o)}` and their updates `H̃^{(t,o)}`.
    pub maps: Vec<Var>,
    pub tilde: Vec<Var>,
    /// Unweighted physics residual of this step, if any.
    pub residual: Option<Var>,
}

/// Physics-informed tensor-train ConvLSTM cell. With physics kind `none` this
/// is the plain tensor-train ConvLSTM.
#[derive(Clone, Debug)]
pub struct PittConvLstmCell {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub config: PittConfig,
    pub w_input: ParamId,
    pub bias: ParamId,
    /// `K×K×(n−m+1)×C×R` per order, bias-free.
    pub window_kernels: Vec<ParamId>,
    /// `1×1×R×R` mixing per order, identity at init.
    pub j_kernels: Vec<ParamId>,
    pub j_biases: Vec<ParamId>,
    /// Chain cores `K×K×R×R`, the last `K×K×R×4C`.
    pub cores: Vec<ParamId>,
    /// Softplus pre-activation of α or c².
    pub coefficient: Option<ParamId>,
}

impl PittConvLstmCell {
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_channels: usize,
        hidden_channels: usize,
        config: PittConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (s, c, k, r, tw) = (input_channels, hidden_channels, config.kernel, config.rank, config.window());
        let m = config.order;
        let w_input = store.add(format!("{prefix}.w_input"), uniform_init(&[k, k, s, 4 * c], k * k * s, rng));
        let bias = store.add(format!("{prefix}.bias"), gate_bias(c));
        let window_kernels = (0..m)
            .map(|o| store.add(format!("{prefix}.window{o}"), uniform_init(&[k, k, tw, c, r], k * k * tw * c, rng)))
            .collect();
        let j_kernels = (0..m)
            .map(|o| {
                let eye = Tensor::from_fn(&[1, 1, r, r], |i| if i / r == i % r { F::one() } else { F::zero() });
                store.add(format!("{prefix}.j{o}"), eye)
            })
            .collect();
        let j_biases = (0..m)
            .map(|o| store.add(format!("{prefix}.j{o}_bias"), Tensor::zeros(&[r])))
            .collect();
        let ranks = Self::ranks_for(&config, c);
        let cores = (0..m)
            .map(|l| {
                let (ri, ro) = (ranks[l], ranks[l + 1]);
                store.add(format!("{prefix}.core{l}"), uniform_init(&[k, k, ri, ro], k * k * ri, rng))
            })
            .collect();
        let coefficient = config.physics.initial_coefficient().map(|v| {
            store.add(format!("{prefix}.physics_coef"), Tensor::scalar(F::of(softplus_inverse(v))))
        });
        Ok(PittConvLstmCell {
            input_channels: s,
            hidden_channels: c,
            config,
            w_input,
            bias,
            window_kernels,
            j_kernels,
            j_biases,
            cores,
            coefficient,
        })
    }

    /// Chain rank vector `(R, …, R, 4C)`.
    pub fn ranks_for(config: &PittConfig, hidden_channels: usize) -> Vec<usize> {
        let mut r = vec![config.rank; config.order];
        r.push(4 * hidden_channels);
        r
    }

    pub fn ranks(&self) -> Vec<usize> {
        Self::ranks_for(&self.config, self.hidden_channels)
    }

    pub fn chain_param_count(&self) -> usize {
        cttd::chain_param_count(self.config.kernel, &self.ranks())
    }

    pub fn param_count(&self) -> usize {
        let PittConfig { order: m, rank: r, kernel: k, .. } = self.config;
        let (s, c, tw) = (self.input_channels, self.hidden_channels, self.config.window());
        k * k * s * 4 * c
            + 4 * c
            + m * k * k * tw * c * r
            + m * (r * r + r)
            + self.chain_param_count()
            + usize::from(self.coefficient.is_some())
    }

    pub fn init_state<F: Real>(&self, tape: &Tape<F>, h: usize, w: usize) -> PittState {
        let c = self.hidden_channels;
        let zero = tape.zeros(&[h, w, c]);
        PittState {
            history: std::iter::repeat_n(zero, self.config.steps).collect(),
            memory: tape.zeros(&[h, w, c]),
        }
    }

    /// Sliding-window maps `H^{(t,o)}`, `o = 1..m`. Window `o` stacks lags
    /// `o..o+n−m` along time, oldest first, and applies a 3D convolution
    /// spanning the whole window.
    pub fn window_map<F: Real>(&self, tape: &Tape<F>, params: &[Var], history: &VecDeque<Var>) -> Result<Vec<Var>> {
        let (m, n, tw) = (self.config.order, self.config.steps, self.config.window());
        if m > n {
            return Err(Error::config(format!("order {m} exceeds steps {n}")));
        }
        if history.len() != n {
            return Err(Error::contract(format!("history holds {} states, expected {n}", history.len())));
        }
        let [h, w, c] = shape3(&tape.shape(history[0]))?;
        (0..m)
            .map(|o| {
                // history[o] is lag o+1; oldest lag of this window is o+tw.
                let stack: Vec<Var> = (0..tw).rev().map(|j| history[o + j]).collect();
                let cat = tape.concat_channels(&stack)?;
                let x = tape.reshape(cat, &[h, w, tw, c])?;
                tape.conv3d(x, params[self.window_kernels[o].index()], None)
            })
            .collect()
    }

    /// `H̃^{(t,o)} = J^{(o)} ∗ H^{(t,o)}` and this step's physics residual.
    pub fn physics_update<F: Real>(
        &self,
        tape: &Tape<F>,
        params: &[Var],
        maps: &[Var],
    ) -> Result<(Vec<Var>, Option<Var>)> {
        let tilde: Vec<Var> = maps
            .iter()
            .enumerate()
            .map(|(o, &h)| {
                tape.conv2d(
                    h,
                    params[self.j_kernels[o].index()],
                    Some(params[self.j_biases[o].index()]),
                )
            })
            .collect::<Result<_>>()?;
        let coef = match self.coefficient {
            Some(id) => Some(tape.softplus(params[id.index()])?),
            None => None,
        };
        let kind = self.config.physics.kind;
        let residual = if kind == PhysicsKind::None {
            None
        } else {
            step_residual(tape, kind, coef, maps, &tilde)?
        };
        Ok((tilde, residual))
    }

    pub fn step<F: Real>(&self, tape: &Tape<F>, params: &[Var], x: Var, state: &PittState) -> Result<PittStep> {
        let maps = self.window_map(tape, params, &state.history)?;
        let (tilde, residual) = self.physics_update(tape, params, &maps)?;
        let cores: Vec<Var> = self.cores.iter().map(|id| params[id.index()]).collect();
        let recurrent = cttd::apply_var(tape, &cores, &tilde)?;
        let from_input = tape.conv2d(x, params[self.w_input.index()], Some(params[self.bias.index()]))?;
        let gates = tape.add(from_input, recurrent)?;
        let (hidden, memory) = lstm_update(tape, gates, state.memory, self.hidden_channels)?;
        let mut history = state.history.clone();
        history.push_front(hidden);
        history.pop_back();
        Ok(PittStep {
            state: PittState { history, memory },
            hidden,
            maps,
            tilde,
            residual,
        })
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::config(format!("kernel size must be odd, got {k}")));
    }
    Ok(())
}

fn shape3(s: &[usize]) -> Result<[usize; 3]> {
    match s {
        [h, w, c] => Ok([*h, *w, *c]),
        _ => Err(Error::shape(format!("expected H×W×C, got {s:?}"))),
    }
}
