//! Stacked recurrent network with block skip connections, and
//! autoregressive rollout with scheduled sampling.
//!
//! Block `b` (0-based) reads the output of block `b−1`, concatenated with
//! the output of block `b−2` when that exists. The first block reads the
//! input frame. A 1×1 convolution maps the last block to the frame channels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{ConvLstmCell, LstmState, PittConfig, PittConvLstmCell, PittState};
use crate::cttd;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::physics::{PhysicsKind, PhysicsSpec};
use crate::tensor::{uniform_init, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Convlstm,
    Tt,
    PittDiffusion,
    PittWave,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Convlstm, CellKind::Tt, CellKind::PittDiffusion, CellKind::PittWave];

    pub fn physics_kind(self) -> PhysicsKind {
        match self {
            CellKind::PittDiffusion => PhysicsKind::Diffusion,
            CellKind::PittWave => PhysicsKind::Wave,
            _ => PhysicsKind::None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Convlstm => "convlstm",
            CellKind::Tt => "tt",
            CellKind::PittDiffusion => "pitt-diffusion",
            CellKind::PittWave => "pitt-wave",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown cell kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layers_per_block: usize,
    /// Hidden channels per block; its length is the block count.
    pub channels: Vec<usize>,
    pub cell: CellKind,
    pub order: usize,
    pub steps: usize,
    pub rank: usize,
    pub kernel: usize,
    /// Initial α or c² of the physics-informed cells.
    pub physics_init: f64,
    /// Frame shape `[D, P, C]`, treated as an `H×W×C` image.
    pub frame: [usize; 3],
}

impl NetworkConfig {
    pub fn paper(cell: CellKind, frame: [usize; 3]) -> Self {
        NetworkConfig {
            layers_per_block: 3,
            channels: vec![32, 48, 48, 32],
            cell,
            order: 3,
            steps: 3,
            rank: 8,
            kernel: 3,
            physics_init: 0.1,
            frame,
        }
    }

    pub fn desk(cell: CellKind, frame: [usize; 3]) -> Self {
        NetworkConfig {
            layers_per_block: 2,
            channels: vec![8, 8],
            ..Self::paper(cell, frame)
        }
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    /// Input channel count of every block after skip concatenation.
    pub fn block_inputs(&self) -> Vec<usize> {
        (0..self.blocks())
            .map(|b| match b {
                0 => self.frame[2],
                1 => self.channels[0],
                _ => self.channels[b - 1] + self.channels[b - 2],
            })
            .collect()
    }

    pub fn pitt_config(&self) -> PittConfig {
        let physics = PhysicsSpec {
            kind: self.cell.physics_kind(),
            alpha: self.physics_init,
            c_squared: self.physics_init,
            ..PhysicsSpec::default()
        };
        PittConfig {
            order: self.order,
            steps: self.steps,
            rank: self.rank,
            kernel: self.kernel,
            physics,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.layers_per_block == 0 {
            return Err(Error::config("network needs at least one block and one layer"));
        }
        if self.channels.contains(&0) || self.frame.contains(&0) {
            return Err(Error::config("channel counts and frame extents must be >= 1"));
        }
        if self.cell != CellKind::Convlstm {
            self.pitt_config().validate()?;
        } else if self.kernel.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if !(self.physics_init > 0.0) {
            return Err(Error::config("physics_init must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    ConvLstm(ConvLstmCell),
    Pitt(PittConvLstmCell),
}

impl Layer {
    pub fn input_channels(&self) -> usize {
        match self {
            Layer::ConvLstm(c) => c.input_channels,
            Layer::Pitt(c) => c.input_channels,
        }
    }

    pub fn hidden_channels(&self) -> usize {
        match self {
            Layer::ConvLstm(c) => c.hidden_channels,
            Layer::Pitt(c) => c.hidden_channels,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::ConvLstm(c) => c.param_count(),
            Layer::Pitt(c) => c.param_count(),
        }
    }
}

#[derive(Clone, Debug)]
enum LayerState {
    Lstm(LstmState),
    Pitt(PittState),
}

impl LayerState {
    fn hidden(&self) -> Var {
        match self {
            LayerState::Lstm(s) => s.hidden,
            LayerState::Pitt(s) => s.history[0],
        }
    }
}

/// Per-rollout recurrent state of every layer.
#[derive(Clone, Debug)]
pub struct NetworkState {
    layers: Vec<LayerState>,
}

/// Predicted frames and the accumulated (unweighted) physics residual.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub predictions: Vec<Var>,
    pub residual: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Network<F> {
    pub config: NetworkConfig,
    pub params: ParamStore<F>,
    /// Layers grouped by block.
    pub blocks: Vec<Vec<Layer>>,
    pub out_kernel: ParamId,
    pub out_bias: ParamId,
}

impl<F: Real> Network<F> {
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let inputs = config.block_inputs();
        let mut blocks = Vec::with_capacity(config.blocks());
        for (b, (&c, &cin)) in config.channels.iter().zip(&inputs).enumerate() {
            let mut layers = Vec::with_capacity(config.layers_per_block);
            for l in 0..config.layers_per_block {
                let s = if l == 0 { cin } else { c };
                let prefix = format!("block{b}.layer{l}");
                let layer = match config.cell {
                    CellKind::Convlstm => {
                        Layer::ConvLstm(ConvLstmCell::new(&mut params, &prefix, s, c, config.kernel, &mut rng)?)
                    }
                    _ => Layer::Pitt(PittConvLstmCell::new(
                        &mut params,
                        &prefix,
                        s,
                        c,
                        config.pitt_config(),
                        &mut rng,
                    )?),
                };
                layers.push(layer);
            }
            blocks.push(layers);
        }
        let last = *config.channels.last().unwrap();
        let out_c = config.frame[2];
        let out_kernel = params.add("output.kernel", uniform_init(&[1, 1, last, out_c], last, &mut rng));
        let out_bias = params.add("output.bias", Tensor::zeros(&[out_c]));
        let net = Network {
            config,
            params,
            blocks,
            out_kernel,
            out_bias,
        };
        net.check_plan()?;
        Ok(net)
    }

    fn check_plan(&self) -> Result<()> {
        let inputs = self.config.block_inputs();
        for (b, layers) in self.blocks.iter().enumerate() {
            let mut width = inputs[b];
            for layer in layers {
                if layer.input_channels() != width {
                    return Err(Error::config(format!(
                        "block {b} layer declares {} input channels, upstream width is {width}",
                        layer.input_channels()
                    )));
                }
                width = layer.hidden_channels();
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.blocks.iter().flatten()
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Parameter count with every tensor-train chain replaced by the dense
    /// higher-order kernel it factorizes.
    pub fn dense_equivalent_count(&self) -> usize {
        let total = self.param_count();
        self.layers().fold(total, |acc, layer| match layer {
            Layer::Pitt(c) => {
                let ranks = c.ranks();
                acc - c.chain_param_count() + cttd::dense_equivalent_count(c.config.order, c.config.kernel, &ranks)
            }
            Layer::ConvLstm(_) => acc,
        })
    }

    pub fn init_state(&self, tape: &Tape<F>) -> NetworkState {
        let [h, w, _] = self.config.frame;
        let layers = self
            .layers()
            .map(|layer| match layer {
                Layer::ConvLstm(c) => LayerState::Lstm(c.init_state(tape, h, w)),
                Layer::Pitt(c) => LayerState::Pitt(c.init_state(tape, h, w)),
            })
            .collect();
        NetworkState { layers }
    }

    /// Advances every layer by one frame and returns the predicted next
    /// frame, plus this step's physics residual summed over layers.
    pub fn step(
        &self,
        tape: &Tape<F>,
        params: &[Var],
        x: Var,
        state: &mut NetworkState,
    ) -> Result<(Var, Option<Var>)> {
        let frame = self.config.frame;
        if tape.shape(x) != frame {
            return Err(Error::shape(format!("frame is {:?}, network expects {frame:?}", tape.shape(x))));
        }
        let mut outs: Vec<Var> = Vec::with_capacity(self.blocks.len());
        let mut residuals = Vec::new();
        let mut idx = 0;
        for (b, layers) in self.blocks.iter().enumerate() {
            let mut h = match b {
                0 => x,
                1 => outs[0],
                _ => tape.concat_channels(&[outs[b - 1], outs[b - 2]])?,
            };
            for layer in layers {
                let next = match (layer, &state.layers[idx]) {
                    (Layer::ConvLstm(c), LayerState::Lstm(s)) => LayerState::Lstm(c.step(tape, params, h, s)?),
                    (Layer::Pitt(c), LayerState::Pitt(s)) => {
                        let out = c.step(tape, params, h, s)?;
                        residuals.extend(out.residual);
                        LayerState::Pitt(out.state)
                    }
                    _ => return Err(Error::contract("state does not belong to this network")),
                };
                h = next.hidden();
                state.layers[idx] = next;
                idx += 1;
            }
            outs.push(h);
        }
        let y = tape.conv2d(
            *outs.last().unwrap(),
            params[self.out_kernel.index()],
            Some(params[self.out_bias.index()]),
        )?;
        let residual = match residuals.len() {
            0 => None,
            _ => Some(tape.add_n(&residuals)?),
        };
        Ok((y, residual))
    }

    /// Consumes `context`, then emits `horizon` frames. The first prediction
    /// comes from the last context frame; for each later frame the input is
    /// the teacher frame with probability `sampling_ratio` and the previous
    /// prediction otherwise. One uniform draw is taken per fed-back frame.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout<R: Rng>(
        &self,
        tape: &Tape<F>,
        params: &[Var],
        context: &[Var],
        horizon: usize,
        teacher: Option<&[Var]>,
        sampling_ratio: f64,
        rng: &mut R,
    ) -> Result<Rollout> {
        if context.is_empty() {
            return Err(Error::contract("rollout needs at least one context frame"));
        }
        if horizon == 0 {
            return Err(Error::contract("horizon must be >= 1"));
        }
        if !(0.0..=1.0).contains(&sampling_ratio) {
            return Err(Error::contract(format!("sampling ratio {sampling_ratio} outside [0, 1]")));
        }
        if sampling_ratio > 0.0 {
            match teacher {
                None => return Err(Error::contract("sampling ratio > 0 requires teacher frames")),
                Some(t) if t.len() < horizon => {
                    return Err(Error::contract(format!(
                        "teacher has {} frames, horizon is {horizon}",
                        t.len()
                    )))
                }
                _ => {}
            }
        }
        let mut state = self.init_state(tape);
        let mut residuals = Vec::new();
        let mut last = None;
        for &x in context {
            let (y, r) = self.step(tape, params, x, &mut state)?;
            residuals.extend(r);
            last = Some(y);
        }
        let mut predictions = vec![last.unwrap()];
        for k in 1..horizon {
            let draw: f64 = rng.random();
            let x = match teacher {
                Some(t) if draw < sampling_ratio => t[k - 1],
                _ => predictions[k - 1],
            };
            let (y, r) = self.step(tape, params, x, &mut state)?;
            residuals.extend(r);
            predictions.push(y);
        }
        let residual = match residuals.len() {
            0 => None,
            _ => Some(tape.add_n(&residuals)?),
        };
        Ok(Rollout { predictions, residual })
    }

    /// Gradient-free autoregressive forecast from plain tensors.
    pub fn forecast(&self, context: &[Tensor<F>], horizon: usize) -> Result<Vec<Tensor<F>>> {
        let tape = Tape::new();
        let params = self.params.bind(&tape);
        let ctx: Vec<Var> = context.iter().map(|t| tape.constant(t.clone())).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.rollout(&tape, &params, &ctx, horizon, None, 0.0, &mut rng)?;
        Ok(out.predictions.iter().map(|&v| tape.value(v).clone()).collect())
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            blocks: self.blocks.clone(),
            out_kernel: self.out_kernel,
            out_bias: self.out_bias,
        }
    }
}
