//! "PITT" checkpoint files.
//!
//! Same framing as VSEQ1 (see `container`). The JSON header carries the
//! configs, schedule, RNG state, log and a tensor table; each table entry
//! gives a byte offset into the payload. Network parameters and ADAM
//! moments are stored as `f32` little-endian, EOF basis tensors as `f64`
//! little-endian.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, EpochLog, ScheduleState, TrainConfig, Trainer};
use crate::container;
use crate::data::{NormStats, VolumeSequence};
use crate::eof::{self, EofBasis, PcSequence, SliceBasis};
use crate::error::{Error, Result};
use crate::network::{CellKind, Network, NetworkConfig};
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 4] = b"PITT";
pub const CKPT_VERSION: u32 = 1;

/// Position of a ChaCha8 stream. `u64`/`u128` fields are strings so JSON
/// readers without 64-bit integers keep them exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: String,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        RngState {
            seed,
            stream: rng.get_stream().to_string(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = |m: &str| Error::format("rng", m.to_string());
        if self.seed.len() != 64 {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream.parse().map_err(|_| bad("stream is not an integer"))?);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word_pos is not an integer"))?);
        Ok(rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BasisMeta {
    depth: usize,
    channels: usize,
    height: usize,
    width: usize,
    components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    network: NetworkConfig,
    train: TrainConfig,
    schedule: ScheduleState,
    adam_step: u64,
    rng: RngState,
    norm: Option<NormStats>,
    basis: Option<BasisMeta>,
    log: Vec<EpochLog>,
    tensors: Vec<TensorEntry>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleState,
    pub rng: RngState,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam_step: u64,
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
    pub basis: Option<Arc<EofBasis>>,
    pub norm: Option<NormStats>,
    pub log: Vec<EpochLog>,
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.net.config.clone(),
            train: self.config.clone(),
            schedule: self.schedule.clone(),
            rng: RngState::capture(&self.rng),
            params: self.net.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            adam_step: self.adam.step,
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            basis: self.basis.clone(),
            norm: self.norm.clone(),
            log: self.log.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = ckpt.network()?;
        let mut trainer = Trainer::new(net, ckpt.train.clone())?;
        let n = trainer.net.params.len();
        if ckpt.adam_m.len() != n || ckpt.adam_v.len() != n {
            return Err(Error::format("tensors", "optimizer moments do not cover every parameter"));
        }
        trainer.adam = Adam {
            step: ckpt.adam_step,
            m: ckpt.adam_m.clone(),
            v: ckpt.adam_v.clone(),
            ..trainer.adam
        };
        trainer.schedule = ckpt.schedule.clone();
        trainer.rng = ckpt.rng.restore()?;
        trainer.log = ckpt.log.clone();
        trainer.basis = ckpt.basis.clone();
        trainer.norm = ckpt.norm.clone();
        Ok(trainer)
    }
}

impl Checkpoint {
    /// Rebuilds the network and loads the stored parameters by name.
    pub fn network(&self) -> Result<Network<f32>> {
        let mut net = Network::build(self.network.clone(), 0)?;
        if net.params.len() != self.params.len() {
            return Err(Error::format(
                "tensors",
                format!("checkpoint has {} parameters, network has {}", self.params.len(), net.params.len()),
            ));
        }
        for (name, t) in &self.params {
            let id = net.params.find(name).map_err(|e| Error::format("tensors", e.to_string()))?;
            net.params.set(id, t.clone()).map_err(|e| Error::format("tensors", e.to_string()))?;
        }
        Ok(net)
    }

    /// Forecasts `horizon` frames after a physical-space context: project onto
    /// the stored basis, normalize, roll the network forward and undo the
    /// normalization. The returned PCs carry the basis for reconstruction.
    pub fn forecast(&self, context: &VolumeSequence, horizon: usize) -> Result<PcSequence> {
        if horizon < 1 {
            return Err(Error::config("horizon must be >= 1"));
        }
        let basis = self
            .basis
            .clone()
            .ok_or_else(|| Error::format("basis", "checkpoint carries no EOF basis"))?;
        let norm = self
            .norm
            .as_ref()
            .ok_or_else(|| Error::format("norm", "checkpoint carries no normalization statistics"))?;
        let net = self.network()?;
        let warmup = if net.config.cell == CellKind::Convlstm { 1 } else { net.config.steps };
        if context.len() < warmup {
            return Err(Error::config(format!(
                "{} context frames, the network needs at least {warmup}",
                context.len()
            )));
        }
        let pcs = eof::project(context, &basis)?;
        let frames = super::pc_frames(&norm.normalize(&pcs.data)?);
        let pred = net.forecast(&frames, horizon)?;
        let [_, d, p, c] = pcs.dims();
        let flat: Vec<f64> = pred.iter().flat_map(|f| f.data().iter().map(|&v| v as f64)).collect();
        Ok(PcSequence {
            data: norm.denormalize(&Tensor::new(&[horizon, d, p, c], flat)?)?,
            time_step_hours: context.time_step_hours,
            basis: Some(basis),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        let mut put32 = |payload: &mut Vec<u8>, name: String, t: &Tensor<f32>| {
            tensors.push(TensorEntry {
                name,
                dtype: Dtype::F32,
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in &self.params {
            put32(&mut payload, format!("param/{name}"), t);
        }
        for ((name, _), m) in self.params.iter().zip(&self.adam_m) {
            put32(&mut payload, format!("adam_m/{name}"), m);
        }
        for ((name, _), v) in self.params.iter().zip(&self.adam_v) {
            put32(&mut payload, format!("adam_v/{name}"), v);
        }
        let basis = self.basis.as_ref().map(|b| {
            for (i, s) in b.slices.iter().enumerate() {
                let (p, n) = (s.eofs.nrows(), s.eofs.ncols());
                let eofs: Vec<f64> = (0..p * n).map(|k| s.eofs[(k / n, k % n)]).collect();
                for (field, shape, data) in [
                    ("mean", vec![n], &s.mean),
                    ("eofs", vec![p, n], &eofs),
                    ("singular_values", vec![s.singular_values.len()], &s.singular_values),
                ] {
                    tensors.push(TensorEntry {
                        name: format!("basis/{i}/{field}"),
                        dtype: Dtype::F64,
                        shape,
                        offset: payload.len(),
                    });
                    for v in data {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            BasisMeta {
                depth: b.depth,
                channels: b.channels,
                height: b.height,
                width: b.width,
                components: b.components,
            }
        });
        let header = Header {
            format: "PITT".into(),
            version: CKPT_VERSION,
            network: self.network.clone(),
            train: self.train.clone(),
            schedule: self.schedule.clone(),
            adam_step: self.adam_step,
            rng: self.rng.clone(),
            norm: self.norm.clone(),
            basis,
            log: self.log.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        container::encode(CKPT_MAGIC, CKPT_VERSION, &json, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(bytes, CKPT_MAGIC, CKPT_VERSION)?;
        let h: Header = serde_json::from_slice(header).map_err(|e| Error::format("header", e.to_string()))?;
        if h.format != "PITT" || h.version != CKPT_VERSION {
            return Err(Error::format("version", format!("header declares {} v{}", h.format, h.version)));
        }
        let mut params = Vec::new();
        let (mut adam_m, mut adam_v) = (Vec::new(), Vec::new());
        let mut basis_parts: Vec<Vec<f64>> = Vec::new();
        for e in &h.tensors {
            let n: usize = e.shape.iter().product();
            let width = match e.dtype {
                Dtype::F32 => 4,
                Dtype::F64 => 8,
            };
            let bytes = payload
                .get(e.offset..e.offset + n * width)
                .ok_or_else(|| Error::format("tensors", format!("{} lies outside the payload", e.name)))?;
            match e.dtype {
                Dtype::F32 => {
                    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                    let t = Tensor::new(&e.shape, data).map_err(|err| Error::format("tensors", err.to_string()))?;
                    let (group, name) = e
                        .name
                        .split_once('/')
                        .ok_or_else(|| Error::format("tensors", format!("bad tensor name {}", e.name)))?;
                    match group {
                        "param" => params.push((name.to_string(), t)),
                        "adam_m" => adam_m.push(t),
                        "adam_v" => adam_v.push(t),
                        _ => return Err(Error::format("tensors", format!("unknown group {group}"))),
                    }
                }
                Dtype::F64 => {
                    basis_parts.push(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
                }
            }
        }
        let basis = match &h.basis {
            None => None,
            Some(meta) => {
                let slices = meta.depth * meta.channels;
                if basis_parts.len() != 3 * slices {
                    return Err(Error::format("basis", "basis tensors do not match the declared slices"));
                }
                let n = meta.height * meta.width;
                let mut out = Vec::with_capacity(slices);
                for part in basis_parts.chunks_exact(3) {
                    if part[0].len() != n || part[1].len() != meta.components * n {
                        return Err(Error::format("basis", "basis tensor has the wrong size"));
                    }
                    out.push(SliceBasis {
                        mean: part[0].clone(),
                        eofs: DMatrix::from_row_slice(meta.components, n, &part[1]),
                        singular_values: part[2].clone(),
                    });
                }
                Some(Arc::new(EofBasis {
                    depth: meta.depth,
                    channels: meta.channels,
                    height: meta.height,
                    width: meta.width,
                    components: meta.components,
                    slices: out,
                }))
            }
        };
        Ok(Checkpoint {
            network: h.network,
            train: h.train,
            schedule: h.schedule,
            rng: h.rng,
            params,
            adam_step: h.adam_step,
            adam_m,
            adam_v,
            basis,
            norm: h.norm,
            log: h.log,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    Checkpoint::from_bytes(&std::fs::read(path).map_err(|e| Error::io_at(e, path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..37 {
            rng.random::<u32>();
        }
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(back.random::<u64>(), rng.random::<u64>());
    }
}
