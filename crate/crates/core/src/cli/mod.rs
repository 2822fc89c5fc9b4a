//! `ttcast` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or format
//! error, 4 numeric abort. `TTCAST_THREADS` caps the worker thread count.

mod manifest;
mod render;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use manifest::{digest, manifest_path_for, Artifact, RunManifest};
pub use render::{log_magnitude, ramp, render_ppm, DEFAULT_HI, DEFAULT_LO, MAGNITUDE_FLOOR};

use crate::data::{self, SplitSpec, SyntheticKind, SyntheticParams, VolumeSequence};
use crate::eof;
use crate::error::{Error, Result};
use crate::metrics;
use crate::network::{CellKind, Network, NetworkConfig};
use crate::trainer::{self, load_checkpoint, Dataset, TrainConfig, Trainer};

/// Learning rate of the desk preset; the paper preset uses 1e-4.
pub const DESK_LR: f64 = 3e-3;

#[derive(Debug, Parser)]
#[command(name = "ttcast", version, about = "Physics-informed tensor-train ConvLSTM forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic diffusion or wave dataset.
    GenData(GenDataArgs),
    /// Compress, split, normalize and train a network.
    Train(TrainArgs),
    /// Forecast from a trained checkpoint.
    Predict(PredictArgs),
    /// Per-frame MSE and SSIM of a forecast.
    Evaluate(EvaluateArgs),
    /// Heatmap of log velocity magnitude as a binary PPM.
    Render(RenderArgs),
    /// Re-run a recorded command and check its outputs are identical.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Diffusion,
    Wave,
    Mixed,
}

impl From<KindArg> for SyntheticKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Diffusion => SyntheticKind::Diffusion,
            KindArg::Wave => SyntheticKind::Wave,
            KindArg::Mixed => SyntheticKind::Mixed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

fn parse_shape(s: &str) -> std::result::Result<[usize; 4], String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if dims.len() != 4 {
        return Err(format!("expected T,D,H,W, got {} values", dims.len()));
    }
    Ok([dims[0], dims[1], dims[2], dims[3]])
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// T,D,H,W
    #[arg(long, value_parser = parse_shape)]
    pub shape: [usize; 4],
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    pub c2: f64,
    #[arg(long, default_value_t = 3)]
    pub modes: usize,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Input VSEQ file in physical space
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// convlstm, tt, pitt-diffusion or pitt-wave [default: pitt-wave]
    #[arg(long)]
    pub cell: Option<String>,
    /// Network size [default: desk]
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Principal components kept per depth slice and channel [default: 16]
    #[arg(long)]
    pub pcs: Option<usize>,
    /// Weight of the physics loss [default: 0.1]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Maximum epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization, shuffling and sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for checkpoints, log and manifest [default: run]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Initial learning rate [default: 3e-3 desk, 1e-4 paper]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Windows per optimizer step [default: 4]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stagnant epochs before sampling, then lr decay, activates [default: 20]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Stagnant epochs before training stops [default: 60]
    #[arg(long)]
    pub stop_patience: Option<usize>,
    /// Epochs for the sampling ratio to fall from 1 to 0 [default: 50]
    #[arg(long)]
    pub ramp_epochs: Option<usize>,
    /// Leading fraction of frames used for training [default: 0.8]
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Observed frames per window [default: 10]
    #[arg(long)]
    pub context_frames: Option<usize>,
    /// Forecast frames per window [default: 10]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON file with any of the flag values; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Optional train settings as read from a config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub data: Option<PathBuf>,
    pub cell: Option<String>,
    pub preset: Option<Preset>,
    pub pcs: Option<usize>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub stop_patience: Option<usize>,
    pub ramp_epochs: Option<usize>,
    pub train_fraction: Option<f64>,
    pub context_frames: Option<usize>,
    pub horizon: Option<usize>,
    pub resume: Option<PathBuf>,
}

/// Train settings with every default materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub cell: CellKind,
    pub preset: Preset,
    pub pcs: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub stop_patience: usize,
    pub ramp_epochs: usize,
    pub train_fraction: f64,
    pub context_frames: usize,
    pub horizon: usize,
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    /// Flags override the config file, which overrides defaults.
    pub fn resolve(&self) -> Result<TrainSettings> {
        let file: TrainFile = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io_at(e, p))?;
                serde_json::from_str(&text).map_err(|e| Error::config(format!("config file {}: {e}", p.display())))?
            }
            None => TrainFile::default(),
        };
        let d = TrainConfig::default();
        let preset = self.preset.or(file.preset).unwrap_or(Preset::Desk);
        let cell = match self.cell.clone().or(file.cell) {
            Some(s) => s.parse()?,
            None => CellKind::PittWave,
        };
        let default_lr = match preset {
            Preset::Paper => d.initial_lr,
            Preset::Desk => DESK_LR,
        };
        Ok(TrainSettings {
            data: self
                .data
                .clone()
                .or(file.data)
                .ok_or_else(|| Error::config("--data is required"))?,
            cell,
            preset,
            pcs: self.pcs.or(file.pcs).unwrap_or(16),
            lambda: self.lambda.or(file.lambda).unwrap_or(d.lambda),
            epochs: self.epochs.or(file.epochs).unwrap_or(d.max_epochs),
            seed: self.seed.or(file.seed).unwrap_or(0),
            out_dir: self.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("run")),
            lr: self.lr.or(file.lr).unwrap_or(default_lr),
            batch_size: self.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
            patience: self.patience.or(file.patience).unwrap_or(d.patience),
            stop_patience: self.stop_patience.or(file.stop_patience).unwrap_or(d.stop_patience),
            ramp_epochs: self.ramp_epochs.or(file.ramp_epochs).unwrap_or(d.ramp_epochs),
            train_fraction: self.train_fraction.or(file.train_fraction).unwrap_or(0.8),
            context_frames: self.context_frames.or(file.context_frames).unwrap_or(d.context),
            horizon: self.horizon.or(file.horizon).unwrap_or(d.horizon),
            resume: self.resume.clone().or(file.resume),
        })
    }
}

impl TrainSettings {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            initial_lr: self.lr,
            patience: self.patience,
            stop_patience: self.stop_patience,
            ramp_epochs: self.ramp_epochs,
            lambda: self.lambda,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            seed: self.seed,
            context: self.context_frames,
            horizon: self.horizon,
            ..TrainConfig::default()
        }
    }

    pub fn network_config(&self, frame: [usize; 3]) -> NetworkConfig {
        match self.preset {
            Preset::Paper => NetworkConfig::paper(self.cell, frame),
            Preset::Desk => NetworkConfig::desk(self.cell, frame),
        }
    }

    /// Equivalent command line with every value explicit.
    pub fn to_args(&self) -> Vec<String> {
        let mut a: Vec<String> = vec![
            "train".into(),
            "--data".into(),
            self.data.display().to_string(),
            "--cell".into(),
            self.cell.to_string(),
            "--preset".into(),
            match self.preset {
                Preset::Paper => "paper".into(),
                Preset::Desk => "desk".into(),
            },
        ];
        let mut push = |k: &str, v: String| {
            a.push(format!("--{k}"));
            a.push(v);
        };
        push("pcs", self.pcs.to_string());
        push("lambda", self.lambda.to_string());
        push("epochs", self.epochs.to_string());
        push("seed", self.seed.to_string());
        push("out-dir", self.out_dir.display().to_string());
        push("lr", self.lr.to_string());
        push("batch-size", self.batch_size.to_string());
        push("patience", self.patience.to_string());
        push("stop-patience", self.stop_patience.to_string());
        push("ramp-epochs", self.ramp_epochs.to_string());
        push("train-fraction", self.train_fraction.to_string());
        push("context-frames", self.context_frames.to_string());
        push("horizon", self.horizon.to_string());
        if let Some(r) = &self.resume {
            push("resume", r.display().to_string());
        }
        a
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Physical-space sequence holding the context frames.
    #[arg(long)]
    pub context: PathBuf,
    /// First context frame; defaults to the last `--frames` frames.
    #[arg(long)]
    pub start: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub horizon: usize,
    /// Physical forecast path; PCs go to `<stem>.pc.vseq` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Truth frame aligned with the first prediction.
    #[arg(long, default_value_t = 0)]
    pub truth_start: usize,
    /// Checkpoint whose EOF basis adds the other space to the report.
    #[arg(long)]
    pub basis_from: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 0)]
    pub depth: usize,
    /// Log-magnitude mapped to the first ramp colour.
    #[arg(long, default_value_t = DEFAULT_LO, allow_hyphen_values = true)]
    pub lo: f64,
    /// Log-magnitude mapped to the last ramp colour.
    #[arg(long, default_value_t = DEFAULT_HI, allow_hyphen_values = true)]
    pub hi: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Contract(_) => 2,
        Error::Shape(_) | Error::Format { .. } | Error::Io(_) | Error::Lookup(_) => 3,
        Error::Numeric(_) => 4,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match configure_threads().and_then(|_| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TTCAST_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::config(format!("TTCAST_THREADS must be a positive integer, got {v:?}")))?;
        // A pool already exists when run() is called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(&a.resolve()?),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Render(a) => render(a),
        Command::Replay(a) => replay(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io_at(e, path))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let params = SyntheticParams {
        alpha: a.alpha,
        c2: a.c2,
        modes: a.modes,
        amplitude: a.amplitude,
    };
    let [t, d, h, w] = a.shape;
    let seq = data::generate_synthetic(a.kind.into(), t, d, h, w, &params, a.seed)?;
    let bytes = data::write_vseq(&seq, data::ByteOrder::Little);
    std::fs::write(&a.out, &bytes).map_err(|e| Error::io_at(e, &a.out))?;
    let shape = a.shape.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let mut args = vec![
        "gen-data".to_string(),
        "--kind".into(),
        format!("{:?}", a.kind).to_lowercase(),
        "--shape".into(),
        shape,
    ];
    for (k, v) in [
        ("alpha", a.alpha.to_string()),
        ("c2", a.c2.to_string()),
        ("modes", a.modes.to_string()),
        ("amplitude", a.amplitude.to_string()),
        ("seed", a.seed.to_string()),
        ("out", a.out.display().to_string()),
    ] {
        args.push(format!("--{k}"));
        args.push(v);
    }
    let mut m = RunManifest::new("gen-data", args, to_json(a), Some(a.seed)).outputs(std::slice::from_ref(&a.out))?;
    m.dataset_digest = Some(digest(&bytes));
    m.save(&manifest_path_for(&a.out))?;
    println!(
        "wrote {} shape {:?} crc32 {}",
        a.out.display(),
        seq.data.shape(),
        digest(&bytes)
    );
    Ok(())
}

fn train(s: &TrainSettings) -> Result<()> {
    let bytes = read(&s.data)?;
    let seq = data::read_vseq(&bytes)?;
    let split = SplitSpec {
        train_fraction: s.train_fraction,
        window: s.context_frames + s.horizon,
    };
    let dataset = Dataset::prepare(&seq, s.pcs, &split)?;
    let frame = dataset.frame_shape()?;
    let mut tr = match &s.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            if ckpt.network.frame != frame {
                return Err(Error::config(format!(
                    "checkpoint frame {:?} does not match data frame {frame:?}",
                    ckpt.network.frame
                )));
            }
            let mut tr = Trainer::from_checkpoint(&ckpt)?;
            tr.config.max_epochs = s.epochs;
            let sch = &mut tr.schedule;
            sch.stop = sch.epoch >= s.epochs || sch.since_best >= tr.config.stop_patience;
            tr
        }
        None => {
            let net = Network::build(s.network_config(frame), s.seed)?;
            Trainer::new(net, s.train_config())?.with_dataset_meta(&dataset)
        }
    };
    println!(
        "ttcast train: cell {} preset {:?} frame {:?} parameters {} dense-equivalent {}",
        tr.net.config.cell,
        s.preset,
        frame,
        tr.net.param_count(),
        tr.net.dense_equivalent_count()
    );
    let persistence = trainer::persistence_mse(&dataset.val, s.context_frames, s.horizon)?;
    println!("persistence baseline val_mse {persistence:.6}");
    let summary = tr.fit(&dataset, Some(&s.out_dir))?;
    println!(
        "done: {} epochs, best epoch {} val_mse {:.6}",
        summary.epochs, summary.best_epoch, summary.best_val_mse
    );
    let outputs: Vec<PathBuf> = ["best.ckpt", "last.ckpt", "train_log.csv"]
        .iter()
        .map(|f| s.out_dir.join(f))
        .filter(|p| p.exists())
        .collect();
    let mut m = RunManifest::new("train", s.to_args(), to_json(s), Some(s.seed))
        .input(&s.data)?
        .outputs(&outputs)?;
    if let Some(r) = &s.resume {
        m = m.input(r)?;
    }
    m.dataset_digest = Some(digest(&bytes));
    m.save(&s.out_dir.join("manifest.json"))
}

/// `<dir>/<stem>.pc.vseq` for an output path.
pub fn pc_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.pc.vseq"))
}

fn predict(a: &PredictArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let seq = data::load(&a.context)?;
    if seq.len() < a.frames {
        return Err(Error::config(format!("context file has {} frames, need {}", seq.len(), a.frames)));
    }
    let start = a.start.unwrap_or(seq.len() - a.frames);
    if start + a.frames > seq.len() {
        return Err(Error::config(format!("frames {start}..{} exceed the file", start + a.frames)));
    }
    let pred_pc = ckpt.forecast(&seq.time_slice(start, start + a.frames)?, a.horizon)?;
    let physical = eof::reconstruct(&pred_pc)?;
    let pc_out = pc_path_for(&a.out);
    data::save(&physical, &a.out)?;
    data::save(&eof::pc_to_volume(&pred_pc), &pc_out)?;
    let mut args = vec![
        "predict".to_string(),
        "--checkpoint".into(),
        a.checkpoint.display().to_string(),
        "--context".into(),
        a.context.display().to_string(),
        "--start".into(),
        start.to_string(),
        "--frames".into(),
        a.frames.to_string(),
        "--horizon".into(),
        a.horizon.to_string(),
        "--out".into(),
        a.out.display().to_string(),
    ];
    args.shrink_to_fit();
    RunManifest::new("predict", args, to_json(a), None)
        .input(&a.checkpoint)?
        .input(&a.context)?
        .outputs(&[a.out.clone(), pc_out.clone()])?
        .save(&manifest_path_for(&a.out))?;
    println!("wrote {} and {}", a.out.display(), pc_out.display());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = data::load(&a.pred)?;
    let truth_all = data::load(&a.truth)?;
    if a.truth_start + pred.len() > truth_all.len() {
        return Err(Error::config(format!(
            "truth has {} frames, need {} from frame {}",
            truth_all.len(),
            pred.len(),
            a.truth_start
        )));
    }
    let mut truth = truth_all.time_slice(a.truth_start, a.truth_start + pred.len())?;
    let basis = match &a.basis_from {
        Some(p) => Some(
            load_checkpoint(p)?
                .basis
                .ok_or_else(|| Error::format("basis", "checkpoint carries no EOF basis"))?,
        ),
        None => None,
    };
    if pred.is_pc_space() != truth.is_pc_space() {
        let b = basis
            .as_ref()
            .ok_or_else(|| Error::config("prediction and truth are in different spaces; pass --basis-from"))?;
        truth = if pred.is_pc_space() {
            eof::pc_to_volume(&eof::project(&truth, b)?)
        } else {
            eof::reconstruct(&eof::pc_from_volume(&truth, Some(b.clone()))?)?
        };
    }
    let reports = metrics::evaluate(&pred, &truth, basis.as_ref())?;
    metrics::write_csv(&reports, BufWriter::new(File::create(&a.out_csv).map_err(|e| Error::io_at(e, &a.out_csv))?))?;
    for r in &reports {
        println!(
            "{}: horizon {} mean mse {:.6e} mean ssim {:.4}{}",
            r.space,
            r.horizon,
            r.mean_mse,
            r.mean_ssim,
            if r.ssim_window_shrunk {
                format!(" (ssim window shrunk to {})", r.ssim_window)
            } else {
                String::new()
            }
        );
    }
    let mut args = vec![
        "evaluate".to_string(),
        "--pred".into(),
        a.pred.display().to_string(),
        "--truth".into(),
        a.truth.display().to_string(),
        "--truth-start".into(),
        a.truth_start.to_string(),
        "--out-csv".into(),
        a.out_csv.display().to_string(),
    ];
    let mut m = RunManifest::new("evaluate", Vec::new(), to_json(a), None)
        .input(&a.pred)?
        .input(&a.truth)?;
    if let Some(b) = &a.basis_from {
        args.push("--basis-from".into());
        args.push(b.display().to_string());
        m = m.input(b)?;
    }
    m.args = args;
    m.outputs(std::slice::from_ref(&a.out_csv))?.save(&manifest_path_for(&a.out_csv))
}

fn render(a: &RenderArgs) -> Result<()> {
    let seq: VolumeSequence = data::load(&a.input)?;
    let img = render_ppm(&seq, a.frame, a.depth, a.lo, a.hi)?;
    std::fs::write(&a.out, &img).map_err(|e| Error::io_at(e, &a.out))?;
    let args = vec![
        "render".to_string(),
        "--in".into(),
        a.input.display().to_string(),
        "--frame".into(),
        a.frame.to_string(),
        "--depth".into(),
        a.depth.to_string(),
        format!("--lo={}", a.lo),
        format!("--hi={}", a.hi),
        "--out".into(),
        a.out.display().to_string(),
    ];
    RunManifest::new("render", args, to_json(a), None)
        .input(&a.input)?
        .outputs(std::slice::from_ref(&a.out))?
        .save(&manifest_path_for(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::load(&a.manifest)?;
    let argv = std::iter::once("ttcast".to_string()).chain(recorded.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::format("manifest", format!("recorded args: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::format("manifest", "a manifest cannot replay another replay"));
    }
    execute(&cli.command)?;
    let changed = recorded.verify_outputs()?;
    if !changed.is_empty() {
        return Err(Error::format("outputs", format!("replay differs: {}", changed.join(", "))));
    }
    println!("replay reproduced {} output(s) bit-identically", recorded.outputs.len());
    Ok(())
}
