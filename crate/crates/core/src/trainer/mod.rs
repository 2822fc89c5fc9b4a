//! Objective, ADAM, the sampling-ratio and learning-rate schedule, and the
//! epoch loop.

mod checkpoint;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CKPT_MAGIC, CKPT_VERSION};

use crate::data::{self, NormStats, SplitSpec, VolumeSequence};
use crate::eof::{self, EofBasis};
use crate::error::{Error, Result};
use crate::metrics;
use crate::network::Network;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Stagnant epochs before sampling, then before lr decay, activates.
    pub patience: usize,
    /// Stagnant epochs after which training stops.
    pub stop_patience: usize,
    /// Epochs for the sampling ratio to fall from 1 to 0.
    pub ramp_epochs: usize,
    pub min_improvement: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub context: usize,
    pub horizon: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            lr_decay_factor: 0.98,
            lr_decay_every: 5,
            patience: 20,
            stop_patience: 60,
            ramp_epochs: 50,
            min_improvement: 1e-5,
            lambda: 0.1,
            batch_size: 4,
            max_epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            context: 10,
            horizon: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::config(format!("lr_decay_factor must lie in (0, 1), got {}", self.lr_decay_factor)));
        }
        if self.patience == 0 || self.stop_patience == 0 || self.lr_decay_every == 0 || self.ramp_epochs == 0 {
            return Err(Error::config("patience, stop_patience, lr_decay_every and ramp_epochs must be >= 1"));
        }
        if !(self.initial_lr > 0.0) || self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::config("initial_lr must be positive and lambda non-negative"));
        }
        if self.batch_size == 0 || self.context == 0 || self.horizon == 0 {
            return Err(Error::config("batch_size, context and horizon must be >= 1"));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.context + self.horizon
    }
}

/// `MAE + MSE + λ·residual` over equally shaped frame lists.
pub fn total_loss<F: Real>(pred: &[Tensor<F>], truth: &[Tensor<F>], residual: f64, lambda: f64) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!("{} predicted frames vs {} truth frames", pred.len(), truth.len())));
    }
    let (mut abs, mut sq, mut n) = (0.0, 0.0, 0usize);
    for (p, t) in pred.iter().zip(truth) {
        if p.shape() != t.shape() {
            return Err(Error::shape(format!("prediction {:?} vs truth {:?}", p.shape(), t.shape())));
        }
        for (a, b) in p.data().iter().zip(t.data()) {
            let d = a.as_f64() - b.as_f64();
            abs += d.abs();
            sq += d * d;
        }
        n += p.len();
    }
    let total = abs / n as f64 + sq / n as f64 + lambda * residual;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss is {total}")));
    }
    Ok(total)
}

/// Loss terms of one rollout on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub l1: Var,
    pub l2: Var,
    pub ldp: Option<Var>,
}

pub fn total_loss_var<F: Real>(
    tape: &Tape<F>,
    pred: &[Var],
    truth: &[Var],
    residual: Option<Var>,
    lambda: f64,
) -> Result<LossVars> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!("{} predicted frames vs {} truth frames", pred.len(), truth.len())));
    }
    let mut abs = Vec::with_capacity(pred.len());
    let mut sq = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(truth) {
        let d = tape.sub(p, t)?;
        abs.push(tape.mean_abs(d)?);
        sq.push(tape.mean_square(d)?);
    }
    let inv = F::of(1.0 / pred.len() as f64);
    let l1 = tape.scale(tape.add_n(&abs)?, inv)?;
    let l2 = tape.scale(tape.add_n(&sq)?, inv)?;
    let mut total = tape.add(l1, l2)?;
    if let Some(r) = residual {
        if lambda != 0.0 {
            let w = tape.scale(r, F::of(lambda))?;
            total = tape.add(total, w)?;
        }
    }
    Ok(LossVars {
        total,
        l1,
        l2,
        ldp: residual,
    })
}

/// Bias-corrected ADAM.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &[Tensor<F>], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (F::of(self.beta1), F::of(self.beta2), F::of(self.epsilon));
        let (ob1, ob2) = (F::of(1.0 - self.beta1), F::of(1.0 - self.beta2));
        let (c1, c2, lr) = (F::of(c1), F::of(c2), F::of(lr));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Sampling-ratio and learning-rate schedule driven by validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Epochs ticked so far.
    pub epoch: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    /// Stagnant epochs since the last improvement or activation.
    pub stagnant: usize,
    /// Stagnant epochs since the last improvement.
    pub since_best: usize,
    pub sampling_start: Option<usize>,
    pub decay_start: Option<usize>,
    /// Values for the next epoch.
    pub sampling_ratio: f64,
    pub lr: f64,
    pub improved: bool,
    pub stop: bool,
}

impl ScheduleState {
    pub fn new(cfg: &TrainConfig) -> Self {
        ScheduleState {
            epoch: 0,
            best: None,
            best_epoch: 0,
            stagnant: 0,
            since_best: 0,
            sampling_start: None,
            decay_start: None,
            sampling_ratio: 1.0,
            lr: cfg.initial_lr,
            improved: false,
            stop: false,
        }
    }

    pub fn tick(&mut self, val_loss: f64, cfg: &TrainConfig) {
        self.epoch += 1;
        let e = self.epoch;
        self.improved = val_loss.is_finite() && self.best.is_none_or(|b| val_loss < b - cfg.min_improvement);
        if self.improved {
            self.best = Some(val_loss);
            self.best_epoch = e;
            self.stagnant = 0;
            self.since_best = 0;
        } else {
            self.stagnant += 1;
            self.since_best += 1;
        }
        if self.sampling_start.is_none() {
            if self.stagnant >= cfg.patience {
                self.sampling_start = Some(e);
                self.stagnant = 0;
            }
        } else if self.decay_start.is_none() && self.stagnant >= cfg.patience {
            self.decay_start = Some(e);
            self.stagnant = 0;
        }
        if let Some(s) = self.sampling_start {
            self.sampling_ratio = (1.0 - (e - s) as f64 / cfg.ramp_epochs as f64).max(0.0);
        }
        if let Some(d) = self.decay_start {
            if e > d && (e - d).is_multiple_of(cfg.lr_decay_every) {
                self.lr *= cfg.lr_decay_factor;
            }
        }
        self.stop = e >= cfg.max_epochs || self.since_best >= cfg.stop_patience;
    }
}

/// Replays a validation-loss history from a fresh schedule.
pub fn schedule_tick(history: &[f64], cfg: &TrainConfig) -> Result<ScheduleState> {
    if history.is_empty() {
        return Err(Error::contract("schedule needs at least one epoch of history"));
    }
    let mut s = ScheduleState::new(cfg);
    for &v in history {
        s.tick(v, cfg);
    }
    Ok(s)
}

/// Normalized PC frames (`D×P×C`) for training and validation, plus the
/// basis and statistics that produced them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Tensor<f32>>,
    pub val: Vec<Tensor<f32>>,
    pub basis: Option<Arc<EofBasis>>,
    pub norm: Option<NormStats>,
}

impl Dataset {
    /// Splits, fits the EOF basis and normalization on the training part,
    /// and applies both to the validation part.
    pub fn prepare(seq: &VolumeSequence, pcs: usize, split: &SplitSpec) -> Result<Self> {
        let (train, val) = data::split(seq, split)?;
        let train_pc = eof::compress(&train, pcs)?;
        let basis = train_pc.basis.clone().expect("compress attaches a basis");
        let val_pc = eof::project(&val, &basis)?;
        let norm = NormStats::fit(&train_pc.data);
        Ok(Dataset {
            train: pc_frames(&norm.normalize(&train_pc.data)?),
            val: pc_frames(&norm.normalize(&val_pc.data)?),
            basis: Some(basis),
            norm: Some(norm),
        })
    }

    pub fn frame_shape(&self) -> Result<[usize; 3]> {
        match self.train.first().map(|f| f.shape()) {
            Some(&[d, p, c]) => Ok([d, p, c]),
            _ => Err(Error::contract("dataset has no training frames")),
        }
    }
}

/// Splits a `T×D×P×C` PC tensor into `D×P×C` f32 frames.
pub fn pc_frames(x: &Tensor<f64>) -> Vec<Tensor<f32>> {
    let s = x.shape();
    let n = s[1..].iter().product::<usize>();
    x.data()
        .chunks_exact(n)
        .map(|c| Tensor::new(&s[1..], c.iter().map(|&v| v as f32).collect()).expect("frame shape"))
        .collect()
}

/// Mean horizon MSE of the repeat-last-context-frame forecast.
pub fn persistence_mse(frames: &[Tensor<f32>], context: usize, horizon: usize) -> Result<f64> {
    let starts = data::window_starts(frames.len(), context + horizon);
    if starts.is_empty() {
        return Err(Error::config("series shorter than one window"));
    }
    let mut total = 0.0;
    for &s in &starts {
        let last = &frames[s + context - 1];
        let pred = vec![last.clone(); horizon];
        total += metrics::mse_per_frame(&pred, &frames[s + context..s + context + horizon])?.iter().sum::<f64>()
            / horizon as f64;
    }
    Ok(total / starts.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub sampling_ratio: f64,
    pub train_l1: f64,
    pub train_l2: f64,
    pub train_ldp: f64,
    pub val_mse: f64,
    pub val_ssim: f64,
    pub val_loss: f64,
}

pub const LOG_HEADER: &str = "epoch,lr,sampling_ratio,train_l1,train_l2,train_ldp,val_mse,val_ssim";

pub fn write_log<W: Write>(log: &[EpochLog], mut out: W) -> Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for e in log {
        writeln!(
            out,
            "{},{:e},{},{:e},{:e},{:e},{:e},{}",
            e.epoch, e.lr, e.sampling_ratio, e.train_l1, e.train_l2, e.train_ldp, e.val_mse, e.val_ssim
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default)]
struct Terms {
    l1: f64,
    l2: f64,
    ldp: f64,
}

/// Validation summary of an autoregressive pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub mse: f64,
    pub ssim: f64,
    pub loss: f64,
}

/// Training state that survives a checkpoint round trip.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network<f32>,
    pub config: TrainConfig,
    pub adam: Adam<f32>,
    pub schedule: ScheduleState,
    pub rng: ChaCha8Rng,
    pub log: Vec<EpochLog>,
    pub basis: Option<Arc<EofBasis>>,
    pub norm: Option<NormStats>,
}

impl Trainer {
    pub fn new(net: Network<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(net.params.tensors(), config.beta1, config.beta2, config.epsilon);
        Ok(Trainer {
            adam,
            schedule: ScheduleState::new(&config),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            net,
            config,
            log: Vec::new(),
            basis: None,
            norm: None,
        })
    }

    pub fn with_dataset_meta(mut self, data: &Dataset) -> Self {
        self.basis = data.basis.clone();
        self.norm = data.norm.clone();
        self
    }

    fn sample(&self, frames: &[Tensor<f32>], ratio: f64, seed: u64) -> Result<(Terms, Vec<Tensor<f32>>)> {
        let (c, h) = (self.config.context, self.config.horizon);
        let tape = Tape::new();
        let params = self.net.params.bind(&tape);
        let vars: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let truth = &vars[c..c + h];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self.net.rollout(&tape, &params, &vars[..c], h, Some(truth), ratio, &mut rng)?;
        let loss = total_loss_var(&tape, &out.predictions, truth, out.residual, self.config.lambda)?;
        let terms = Terms {
            l1: tape.value(loss.l1).item().as_f64(),
            l2: tape.value(loss.l2).item().as_f64(),
            ldp: loss.ldp.map_or(0.0, |v| tape.value(v).item().as_f64()),
        };
        let total = tape.value(loss.total).item();
        if !total.is_finite() {
            return Err(Error::Numeric(format!("training loss is {total}")));
        }
        let grads = tape.gradient(loss.total, &params)?;
        Ok((terms, grads))
    }

    /// One pass over shuffled training windows; returns mean loss terms.
    fn train_epoch(&mut self, data: &Dataset) -> Result<Terms> {
        let window = self.config.window();
        let mut starts = data::window_starts(data.train.len(), window);
        if starts.is_empty() {
            return Err(Error::config("training split is shorter than one window"));
        }
        starts.shuffle(&mut self.rng);
        let ratio = self.schedule.sampling_ratio;
        let lr = self.schedule.lr;
        let mut sum = Terms::default();
        for batch in starts.chunks(self.config.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| self.rng.random()).collect();
            let results: Vec<Result<(Terms, Vec<Tensor<f32>>)>> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&s, &seed)| self.sample(&data.train[s..s + window], ratio, seed))
                .collect();
            let mut grads: Option<Vec<Tensor<f32>>> = None;
            for r in results {
                let (t, g) = r?;
                sum.l1 += t.l1;
                sum.l2 += t.l2;
                sum.ldp += t.ldp;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b)?;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let grads: Vec<Tensor<f32>> = grads.unwrap().iter().map(|g| g.scale(scale)).collect();
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
            self.adam.step(self.net.params.tensors_mut(), &grads, lr)?;
        }
        let n = starts.len() as f64;
        Ok(Terms {
            l1: sum.l1 / n,
            l2: sum.l2 / n,
            ldp: sum.ldp / n,
        })
    }

    /// Autoregressive validation over every window of `frames`.
    pub fn validate(&self, frames: &[Tensor<f32>]) -> Result<Validation> {
        let (c, h) = (self.config.context, self.config.horizon);
        let starts = data::window_starts(frames.len(), c + h);
        if starts.is_empty() {
            return Err(Error::config("validation split is shorter than one window"));
        }
        let range = metrics::dynamic_range(frames);
        let lambda = self.config.lambda;
        let per_window: Vec<Result<(f64, f64, f64)>> = starts
            .par_iter()
            .map(|&s| {
                let tape = Tape::new();
                let params = self.net.params.bind(&tape);
                let ctx: Vec<Var> = frames[s..s + c].iter().map(|f| tape.constant(f.clone())).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = self.net.rollout(&tape, &params, &ctx, h, None, 0.0, &mut rng)?;
                let pred: Vec<Tensor<f32>> = out.predictions.iter().map(|&v| tape.value(v).clone()).collect();
                let truth = &frames[s + c..s + c + h];
                let residual = out.residual.map_or(0.0, |v| tape.value(v).item().as_f64());
                let loss = total_loss(&pred, truth, residual, lambda)?;
                let mse = metrics::mse_per_frame(&pred, truth)?.iter().sum::<f64>() / h as f64;
                let mut ssim = 0.0;
                for (p, t) in pred.iter().zip(truth) {
                    ssim += metrics::ssim(p, t, range)?.value;
                }
                Ok((mse, ssim / h as f64, loss))
            })
            .collect();
        let mut acc = (0.0, 0.0, 0.0);
        for r in per_window {
            let (m, s, l) = r?;
            acc.0 += m;
            acc.1 += s;
            acc.2 += l;
        }
        let n = starts.len() as f64;
        Ok(Validation {
            mse: acc.0 / n,
            ssim: acc.1 / n,
            loss: acc.2 / n,
        })
    }

    /// Trains one epoch, validates, and advances the schedule.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        let lr = self.schedule.lr;
        let ratio = self.schedule.sampling_ratio;
        let terms = self.train_epoch(data)?;
        let val = self.validate(&data.val)?;
        if !val.loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss is {}", val.loss)));
        }
        self.schedule.tick(val.loss, &self.config);
        let entry = EpochLog {
            epoch: self.schedule.epoch,
            lr,
            sampling_ratio: ratio,
            train_l1: terms.l1,
            train_l2: terms.l2,
            train_ldp: terms.ldp,
            val_mse: val.mse,
            val_ssim: val.ssim,
            val_loss: val.loss,
        };
        log::info!(
            "epoch {} lr {:.3e} ratio {:.2} train l1 {:.4} l2 {:.4} ldp {:.4} val mse {:.4} ssim {:.4}",
            entry.epoch,
            lr,
            ratio,
            terms.l1,
            terms.l2,
            terms.ldp,
            val.mse,
            val.ssim
        );
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Runs epochs until the schedule stops. With `out_dir`, writes
    /// `last.ckpt` and `train_log.csv` every epoch and `best.ckpt` on
    /// validation improvement.
    pub fn fit(&mut self, data: &Dataset, out_dir: Option<&Path>) -> Result<FitSummary> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        while !self.schedule.stop {
            self.run_epoch(data)?;
            if let Some(dir) = out_dir {
                let ckpt = self.checkpoint();
                save_checkpoint(&ckpt, dir.join("last.ckpt"))?;
                if self.schedule.improved {
                    save_checkpoint(&ckpt, dir.join("best.ckpt"))?;
                }
                let f = BufWriter::new(File::create(dir.join("train_log.csv"))?);
                write_log(&self.log, f)?;
            }
        }
        Ok(self.summary(out_dir))
    }

    /// Runs exactly `epochs` more epochs, ignoring the stop flag.
    pub fn run_epochs(&mut self, data: &Dataset, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    pub fn summary(&self, out_dir: Option<&Path>) -> FitSummary {
        let best = self.log.iter().find(|e| e.epoch == self.schedule.best_epoch);
        FitSummary {
            epochs: self.schedule.epoch,
            best_epoch: self.schedule.best_epoch,
            best_val_mse: best.map_or(f64::NAN, |e| e.val_mse),
            best_val_loss: self.schedule.best.unwrap_or(f64::NAN),
            checkpoint: out_dir.map(|d| d.join("best.ckpt")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub best_val_loss: f64,
    pub checkpoint: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{CellKind, NetworkConfig};

    #[test]
    fn total_loss_examples() {
        let t = vec![Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64 * 0.1)];
        assert_eq!(total_loss(&t, &t, 0.0, 0.1).unwrap(), 0.0);
        let p = vec![t[0].map(|v| v + 1.0)];
        assert!((total_loss(&p, &t, 0.0, 0.1).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(total_loss(&t, &t, 2.0, 0.5).unwrap(), 1.0);
        assert!(total_loss(&t, &[Tensor::zeros(&[2, 3, 1])], 0.0, 0.0).is_err());
    }

    #[test]
    fn tape_loss_matches_value_loss() {
        let tape = Tape::<f64>::new();
        let p = Tensor::from_fn(&[2, 2, 2], |i| (i as f64).sin());
        let t = Tensor::from_fn(&[2, 2, 2], |i| (i as f64).cos());
        let (pv, tv) = (tape.constant(p.clone()), tape.constant(t.clone()));
        let r = tape.constant(Tensor::scalar(0.7));
        let l = total_loss_var(&tape, &[pv, pv], &[tv, tv], Some(r), 0.3).unwrap();
        let want = total_loss(&[p.clone(), p], &[t.clone(), t], 0.7, 0.3).unwrap();
        assert!((tape.value(l.total).item() - want).abs() < 1e-14);
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![Tensor::<f64>::full(&[1], 1.0)];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        let g = vec![p[0].clone()];
        adam.step(&mut p, &g, 0.1).unwrap();
        assert!((p[0].item() - 0.9).abs() < 1e-8);

        let g = vec![Tensor::new(&[4], vec![3.0, -0.01, 250.0, -7.0]).unwrap()];
        let mut p = vec![Tensor::<f64>::zeros(&[4])];
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &g, 1e-3).unwrap();
        for (w, g) in p[0].data().iter().zip(g[0].data()) {
            assert!((w + 1e-3 * g.signum()).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![Tensor::<f64>::from_fn(&[3], |i| i as f64)];
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8);
        for _ in 0..10 {
            adam.step(&mut p, &[Tensor::zeros(&[3])], 0.1).unwrap();
        }
        assert_eq!(p, before);
        assert!(adam.step(&mut p, &[Tensor::zeros(&[2])], 0.1).is_err());
    }

    #[test]
    fn improving_history_keeps_ratio_and_lr() {
        let cfg = TrainConfig::default();
        let hist: Vec<f64> = (0..100).map(|i| 10.0 - i as f64 * 0.01).collect();
        let s = schedule_tick(&hist, &cfg).unwrap();
        assert_eq!(s.sampling_ratio, 1.0);
        assert_eq!(s.lr, cfg.initial_lr);
        assert!(schedule_tick(&[], &cfg).is_err());
    }

    #[test]
    fn ramp_after_flat_epochs() {
        let cfg = TrainConfig {
            ramp_epochs: 10,
            max_epochs: 1000,
            stop_patience: 1000,
            ..TrainConfig::default()
        };
        let mut s = ScheduleState::new(&cfg);
        s.tick(1.0, &cfg);
        let mut ratios = vec![];
        for _ in 0..31 {
            s.tick(1.0, &cfg);
            ratios.push(s.sampling_ratio);
        }
        assert!(ratios[..19].iter().all(|&r| r == 1.0));
        let want: Vec<f64> = (0..=10).map(|k| 1.0 - k as f64 / 10.0).collect();
        assert_eq!(&ratios[19..30], &want[..]);
        assert_eq!(ratios[30], 0.0);
    }

    #[test]
    fn persistence_of_constant_series_is_zero() {
        let frames = vec![Tensor::<f32>::full(&[2, 3, 2], 0.5); 25];
        assert_eq!(persistence_mse(&frames, 10, 10).unwrap(), 0.0);
    }

    fn tiny_dataset() -> Dataset {
        let seq = crate::data::generate_synthetic(
            crate::data::SyntheticKind::Wave,
            60,
            1,
            6,
            6,
            &Default::default(),
            3,
        )
        .unwrap();
        Dataset::prepare(&seq, 4, &SplitSpec { train_fraction: 0.6, window: 8 }).unwrap()
    }

    fn tiny_trainer(data: &Dataset) -> Trainer {
        let cfg = TrainConfig {
            context: 4,
            horizon: 4,
            initial_lr: 1e-3,
            ..TrainConfig::default()
        };
        let mut net_cfg = NetworkConfig::desk(CellKind::PittWave, data.frame_shape().unwrap());
        net_cfg.channels = vec![4];
        net_cfg.layers_per_block = 1;
        net_cfg.rank = 2;
        Trainer::new(Network::build(net_cfg, 1).unwrap(), cfg).unwrap().with_dataset_meta(data)
    }

    #[test]
    fn fixed_seed_repeats_first_epoch() {
        let data = tiny_dataset();
        let mut a = tiny_trainer(&data);
        let mut b = tiny_trainer(&data);
        assert_eq!(a.run_epoch(&data).unwrap(), b.run_epoch(&data).unwrap());
        assert_eq!(a.net.params, b.net.params);
    }
}
