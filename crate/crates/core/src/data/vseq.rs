//! VSEQ1: self-describing container for `T×D×H×W×C` float sequences.
//!
//! Framing is described in `container`. The header is JSON:
//! `{"shape":[T,D,H,W,C],"dtype":"f32le","time_step_hours":12.0,"axes":[...]}`.
//! Readers accept `f32be` payloads and byte-swap them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VolumeSequence;
use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VSEQ_MAGIC: &[u8; 4] = b"VSEQ";
pub const VSEQ_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn dtype(self) -> &'static str {
        match self {
            ByteOrder::Little => "f32le",
            ByteOrder::Big => "f32be",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VseqHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub time_step_hours: f64,
    pub axes: Vec<String>,
}

pub fn write_vseq(seq: &VolumeSequence, order: ByteOrder) -> Vec<u8> {
    let header = VseqHeader {
        shape: seq.data.shape().to_vec(),
        dtype: order.dtype().to_string(),
        time_step_hours: seq.time_step_hours,
        axes: seq.axes.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut payload = Vec::with_capacity(seq.data.len() * 4);
    for v in seq.data.data() {
        match order {
            ByteOrder::Little => payload.extend_from_slice(&v.to_le_bytes()),
            ByteOrder::Big => payload.extend_from_slice(&v.to_be_bytes()),
        }
    }
    container::encode(VSEQ_MAGIC, VSEQ_VERSION, &json, &payload)
}

pub fn read_vseq(bytes: &[u8]) -> Result<VolumeSequence> {
    let (header, payload) = container::decode(bytes, VSEQ_MAGIC, VSEQ_VERSION)?;
    let header: VseqHeader =
        serde_json::from_slice(header).map_err(|e| Error::format("header", e.to_string()))?;
    let big = match header.dtype.as_str() {
        "f32le" => false,
        "f32be" => true,
        other => return Err(Error::format("dtype", format!("unsupported dtype {other:?}"))),
    };
    if header.shape.len() != 5 {
        return Err(Error::format("shape", format!("expected 5 axes, got {:?}", header.shape)));
    }
    let n: usize = header.shape.iter().product();
    if payload.len() != n * 4 {
        return Err(Error::format(
            "shape",
            format!(
                "header shape {:?} needs {} payload bytes, found {}",
                header.shape,
                n * 4,
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| {
            let b: [u8; 4] = b.try_into().unwrap();
            if big {
                f32::from_be_bytes(b)
            } else {
                f32::from_le_bytes(b)
            }
        })
        .collect();
    let tensor = Tensor::new(&header.shape, data).map_err(|e| Error::format("shape", e.to_string()))?;
    VolumeSequence::with_axes(tensor, header.time_step_hours, header.axes)
        .map_err(|e| Error::format("payload", e.to_string()))
}

pub fn save(seq: &VolumeSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_vseq(seq, ByteOrder::Little)).map_err(|e| Error::io_at(e, path))
}

pub fn load(path: impl AsRef<Path>) -> Result<VolumeSequence> {
    let path = path.as_ref();
    read_vseq(&std::fs::read(path).map_err(|e| Error::io_at(e, path))?)
}
