//! Python bindings. Tensors cross the boundary as flat row-major lists plus a
//! shape.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ttcast::data::{self, SplitSpec, SyntheticKind, SyntheticParams};
use ttcast::eof::{self, EofBasis};
use ttcast::metrics;
use ttcast::network::{CellKind, NetworkConfig};
use ttcast::tensor::Tensor;
use ttcast::trainer::{self, Checkpoint, Dataset, TrainConfig};
use ttcast::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Shape(_) => PyValueError::new_err(msg),
        Error::Format { .. } | Error::Io(_) => PyIOError::new_err(msg),
        Error::Lookup(_) => PyKeyError::new_err(msg),
        Error::Numeric(_) => PyArithmeticError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ttcast::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn cell_kind(name: &str) -> PyResult<CellKind> {
    name.parse().py()
}

fn network_config(cell: CellKind, preset: &str, frame: [usize; 3]) -> PyResult<NetworkConfig> {
    match preset {
        "paper" => Ok(NetworkConfig::paper(cell, frame)),
        "desk" => Ok(NetworkConfig::desk(cell, frame)),
        other => Err(PyValueError::new_err(format!("unknown preset {other:?}, expected paper or desk"))),
    }
}

/// A `T×D×H×W×C` field sequence (or `T×D×P×1×C` principal components).
#[pyclass(name = "VolumeSequence", module = "ttcast", skip_from_py_object)]
#[derive(Clone)]
struct PyVolumeSequence {
    inner: data::VolumeSequence,
}

#[pymethods]
impl PyVolumeSequence {
    #[new]
    #[pyo3(signature = (values, shape, time_step_hours = 12.0))]
    fn new(values: Vec<f32>, shape: Vec<usize>, time_step_hours: f64) -> PyResult<Self> {
        let t = Tensor::new(&shape, values).py()?;
        Ok(PyVolumeSequence {
            inner: data::VolumeSequence::new(t, time_step_hours).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyVolumeSequence {
            inner: data::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save(&self.inner, path).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.data.shape().to_vec()
    }

    #[getter]
    fn time_step_hours(&self) -> f64 {
        self.inner.time_step_hours
    }

    #[getter]
    fn is_pc_space(&self) -> bool {
        self.inner.is_pc_space()
    }

    fn values(&self) -> Vec<f32> {
        self.inner.data.data().to_vec()
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(PyVolumeSequence {
            inner: self.inner.time_slice(start, end).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("VolumeSequence(shape={:?})", self.inner.data.shape())
    }
}

/// Principal components with the EOF basis that produced them.
#[pyclass(name = "PcSequence", module = "ttcast", skip_from_py_object)]
#[derive(Clone)]
struct PyPcSequence {
    inner: eof::PcSequence,
}

#[pymethods]
impl PyPcSequence {
    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.data.shape().to_vec()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.data.data().to_vec()
    }

    /// Singular values of slice `(depth, channel)`, largest first.
    fn singular_values(&self, depth: usize, channel: usize) -> PyResult<Vec<f64>> {
        let b = self.basis()?;
        if depth >= b.depth || channel >= b.channels {
            return Err(PyValueError::new_err(format!(
                "slice ({depth}, {channel}) outside {}x{}",
                b.depth, b.channels
            )));
        }
        Ok(b.slice(depth, channel).singular_values.clone())
    }

    fn reconstruct(&self) -> PyResult<PyVolumeSequence> {
        Ok(PyVolumeSequence {
            inner: eof::reconstruct(&self.inner).py()?,
        })
    }

    fn to_volume(&self) -> PyVolumeSequence {
        PyVolumeSequence {
            inner: eof::pc_to_volume(&self.inner),
        }
    }
}

impl PyPcSequence {
    fn basis(&self) -> PyResult<&Arc<EofBasis>> {
        self.inner
            .basis
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("sequence has no EOF basis"))
    }
}

#[pyfunction]
#[pyo3(signature = (kind, shape, seed = 0, alpha = 0.1, c2 = 0.2, modes = 3, amplitude = 0.5))]
fn generate_synthetic(
    kind: &str,
    shape: [usize; 4],
    seed: u64,
    alpha: f64,
    c2: f64,
    modes: usize,
    amplitude: f64,
) -> PyResult<PyVolumeSequence> {
    let kind = match kind {
        "diffusion" => SyntheticKind::Diffusion,
        "wave" => SyntheticKind::Wave,
        "mixed" => SyntheticKind::Mixed,
        other => return Err(PyValueError::new_err(format!("unknown kind {other:?}"))),
    };
    let params = SyntheticParams {
        alpha,
        c2,
        modes,
        amplitude,
    };
    let [t, d, h, w] = shape;
    Ok(PyVolumeSequence {
        inner: data::generate_synthetic(kind, t, d, h, w, &params, seed).py()?,
    })
}

#[pyfunction]
fn compress(seq: &PyVolumeSequence, pcs: usize) -> PyResult<PyPcSequence> {
    Ok(PyPcSequence {
        inner: eof::compress(&seq.inner, pcs).py()?,
    })
}

/// Per-frame MSE and SSIM; one dict per reported space.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    pred: &PyVolumeSequence,
    truth: &PyVolumeSequence,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let reports = metrics::evaluate(&pred.inner, &truth.inner, None).py()?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("space", r.space.to_string())?;
            d.set_item("mse", r.mse)?;
            d.set_item("ssim", r.ssim)?;
            d.set_item("mean_mse", r.mean_mse)?;
            d.set_item("mean_ssim", r.mean_ssim)?;
            Ok(d)
        })
        .collect()
}

/// Network shape and parameter accounting for a cell kind and preset.
#[pyclass(name = "Network", module = "ttcast")]
struct PyNetwork {
    inner: ttcast::network::Network<f32>,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (cell, frame, preset = "desk", seed = 0))]
    fn new(cell: &str, frame: [usize; 3], preset: &str, seed: u64) -> PyResult<Self> {
        let cfg = network_config(cell_kind(cell)?, preset, frame)?;
        Ok(PyNetwork {
            inner: ttcast::network::Network::build(cfg, seed).py()?,
        })
    }

    #[getter]
    fn cell(&self) -> String {
        self.inner.config.cell.to_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn dense_equivalent_count(&self) -> usize {
        self.inner.dense_equivalent_count()
    }

    /// Rolls forward from `D×P×C` context frames given as flat lists.
    fn forecast(&self, context: Vec<Vec<f32>>, horizon: usize) -> PyResult<Vec<Vec<f32>>> {
        let frame = self.inner.config.frame;
        let frames = context
            .into_iter()
            .map(|f| Tensor::new(&frame, f))
            .collect::<ttcast::Result<Vec<_>>>()
            .py()?;
        let out = self.inner.forecast(&frames, horizon).py()?;
        Ok(out.into_iter().map(|t| t.into_data()).collect())
    }
}

/// Compresses a sequence, builds a network and trains it epoch by epoch.
#[pyclass(name = "Trainer", module = "ttcast")]
struct PyTrainer {
    inner: trainer::Trainer,
    data: Dataset,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (
        seq, cell = "pitt-wave", pcs = 16, preset = "desk", lr = None, lambda_ = 0.1,
        max_epochs = 200, context = 10, horizon = 10, batch_size = 4, seed = 0, train_fraction = 0.8
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        seq: &PyVolumeSequence,
        cell: &str,
        pcs: usize,
        preset: &str,
        lr: Option<f64>,
        lambda_: f64,
        max_epochs: usize,
        context: usize,
        horizon: usize,
        batch_size: usize,
        seed: u64,
        train_fraction: f64,
    ) -> PyResult<Self> {
        let split = SplitSpec {
            train_fraction,
            window: context + horizon,
        };
        let data = Dataset::prepare(&seq.inner, pcs, &split).py()?;
        let cfg = network_config(cell_kind(cell)?, preset, data.frame_shape().py()?)?;
        let default_lr = if preset == "paper" { 1e-4 } else { ttcast::cli::DESK_LR };
        let net = ttcast::network::Network::build(cfg, seed).py()?;
        let tc = TrainConfig {
            initial_lr: lr.unwrap_or(default_lr),
            lambda: lambda_,
            max_epochs,
            context,
            horizon,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let inner = trainer::Trainer::new(net, tc).py()?.with_dataset_meta(&data);
        Ok(PyTrainer { inner, data })
    }

    #[staticmethod]
    fn resume(checkpoint: PathBuf, seq: &PyVolumeSequence, pcs: usize, train_fraction: f64) -> PyResult<Self> {
        let ckpt = trainer::load_checkpoint(checkpoint).py()?;
        let inner = trainer::Trainer::from_checkpoint(&ckpt).py()?;
        let split = SplitSpec {
            train_fraction,
            window: inner.config.window(),
        };
        let data = Dataset::prepare(&seq.inner, pcs, &split).py()?;
        Ok(PyTrainer { inner, data })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.net.param_count()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.schedule.epoch
    }

    fn persistence_mse(&self) -> PyResult<f64> {
        let c = &self.inner.config;
        trainer::persistence_mse(&self.data.val, c.context, c.horizon).py()
    }

    /// Trains one epoch and returns its log row.
    fn run_epoch<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let e = py.detach(|| self.inner.run_epoch(&self.data)).py()?;
        let d = PyDict::new(py);
        d.set_item("epoch", e.epoch)?;
        d.set_item("lr", e.lr)?;
        d.set_item("sampling_ratio", e.sampling_ratio)?;
        d.set_item("train_l1", e.train_l1)?;
        d.set_item("train_l2", e.train_l2)?;
        d.set_item("train_ldp", e.train_ldp)?;
        d.set_item("val_mse", e.val_mse)?;
        d.set_item("val_ssim", e.val_ssim)?;
        d.set_item("val_loss", e.val_loss)?;
        Ok(d)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&self.inner.checkpoint(), path).py()
    }
}

/// Forecasts `horizon` frames after the context using a saved checkpoint and
/// returns `(physical, pcs)`.
#[pyfunction]
fn predict(checkpoint: PathBuf, context: &PyVolumeSequence, horizon: usize) -> PyResult<(PyVolumeSequence, PyPcSequence)> {
    let ckpt: Checkpoint = trainer::load_checkpoint(checkpoint).py()?;
    let pcs = ckpt.forecast(&context.inner, horizon).py()?;
    let physical = eof::reconstruct(&pcs).py()?;
    Ok((PyVolumeSequence { inner: physical }, PyPcSequence { inner: pcs }))
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> u8 {
    ttcast::cli::run(std::iter::once("ttcast".to_string()).chain(args))
}

#[pymodule(name = "ttcast")]
pub fn ttcast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("CELL_KINDS", CellKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    m.add_class::<PyVolumeSequence>()?;
    m.add_class::<PyPcSequence>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
