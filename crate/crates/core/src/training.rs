//! Supervised training of DSSR-Net against blurred line-spectrum labels.
//!
//! A run writes into `checkpoint_dir`:
//!
//! ```text
//! dssr.ckpt        network weights (see `checkpoint`)
//! train_state.bin  Adam moments, step and next epoch, for resuming
//! train_log.csv    step,epoch,loss,wall_time_s (appended)
//! epoch_log.csv    epoch,mean_loss,probe_success (appended)
//! ```

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rrpsr_autodiff::{Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::read_dataset;
use crate::error::{Error, Result};
use crate::eval::{Estimator, Harness, SuccessCriteria};
use crate::network::{echo_batch, BnMode, DssrArch, DssrNet, ParamStore};
use crate::seed;
use crate::signal::{make_label, DatasetItem, RadarConfig};

pub const CHECKPOINT_FILE: &str = "dssr.ckpt";
pub const STATE_FILE: &str = "train_state.bin";
pub const STEP_LOG_FILE: &str = "train_log.csv";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";

/// Validation probe: two targets 0.8 Rayleigh apart at 15 dB.
pub const PROBE_RHO_D: f64 = 0.8;
pub const PROBE_SNR_DB: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub dataset_path: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Relabel the dataset scenes with this kernel width instead of using
    /// the stored labels.
    pub label_sigma: Option<f64>,
    /// Checkpoint and probe every this many epochs; 0 means only at the end.
    pub eval_every: usize,
    pub probe_trials: usize,
    pub resume: bool,
    pub arch: DssrArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 10 epochs, batch 256, lr 5e-4; pair with a 20k-item dataset.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            learning_rate: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            dataset_path: PathBuf::from("train.bin"),
            checkpoint_dir: PathBuf::from("checkpoints"),
            label_sigma: None,
            eval_every: 1,
            probe_trials: 500,
            resume: false,
            arch: DssrArch::default(),
        }
    }

    /// 100 epochs, batch 1024; pair with a 500k-item dataset.
    pub fn paper() -> Self {
        Self {
            epochs: 100,
            batch_size: 1024,
            eval_every: 10,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("TrainConfig", reason));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} outside (0, 1)"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be > 0".into());
        }
        if let Some(s) = self.label_sigma {
            if !(s > 0.0) {
                return bad(format!("label_sigma {s} must be > 0"));
            }
        }
        self.arch.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid("adam_step", "gradient count does not match parameters"));
    }
    for (name, g) in params.names().iter().zip(grads) {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powf(t));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powf(t));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.epsilon);
    let one = T::one();
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `(1/B) Σ_b ||pred_b − label_b||²` for `[B, M]` inputs.
pub fn mse_loss<T: Real>(tape: &mut Tape<T>, pred: Var, labels: Var) -> Result<Var> {
    let batch = tape.shape(pred).first().copied().unwrap_or(1).max(1);
    let d = tape.sub(pred, labels)?;
    let sq = tape.mul(d, d)?;
    let total = tape.reduce_sum(sq);
    Ok(tape.scale(total, T::from_f64_lossy(1.0 / batch as f64)))
}

/// Forward, loss, backward and Adam update on one batch. Returns the loss
/// before the update.
pub fn train_step<T: Real>(
    net: &mut DssrNet<T>,
    adam: &mut AdamState<T>,
    cfg: &AdamConfig,
    items: &[&DatasetItem],
) -> Result<f64> {
    let arch = *net.arch();
    let echoes: Vec<_> = items.iter().map(|it| it.echo.clone()).collect();
    let m = arch.grid_size();
    let mut labels = Vec::with_capacity(items.len() * m);
    for it in items {
        if it.label.values.len() != m {
            return Err(Error::invalid("train_step", format!("label length {} != M = {m}", it.label.values.len())));
        }
        labels.extend(it.label.values.iter().map(|&v| T::from_f64_lossy(v)));
    }
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, true);
    let y = tape.complex_constant(echo_batch(&echoes, arch.n_samples)?);
    let target = tape.constant(Tensor::new(&[items.len(), m], labels)?);
    let mut buffers = net.buffers().clone();
    let out = net.build(&mut tape, &vars, y, BnMode::Train(&mut buffers))?;
    let loss = mse_loss(&mut tape, out.profile, target)?;
    let loss_value = tape.value(loss).data()[0].as_f64();
    tape.backward(loss)?;
    let grads: Vec<Tensor<T>> = vars
        .iter()
        .zip(net.params().values())
        .map(|(&v, p)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    drop(tape);
    adam_step(net.params_mut(), &grads, adam, cfg)?;
    *net.buffers_mut() = buffers;
    Ok(loss_value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub probe_success: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    pub net: DssrNet<f32>,
    pub log: TrainLog,
    pub checkpoint: PathBuf,
}

/// Success rate of `net` on the fixed validation probe.
pub fn probe_success(net: &DssrNet<f32>, trials: usize, seed: u64) -> Result<f64> {
    let arch = net.arch();
    let cfg = RadarConfig::new(arch.n_samples, arch.oversample, seed)?;
    let harness = Harness::new(cfg, SuccessCriteria::for_grid(&cfg), seed)?;
    let est = Estimator::Dssr(Arc::new(net.clone()));
    harness.success_rate(&est, 0, PROBE_RHO_D, PROBE_SNR_DB, 1.0, trials)
}

/// Read the dataset at `cfg.dataset_path` and train.
pub fn train(cfg: &TrainConfig, progress: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = read_dataset(&cfg.dataset_path)?;
    let (n, m) = (data.header.n as usize, data.header.m as usize);
    if n != cfg.arch.n_samples || m != cfg.arch.grid_size() {
        return Err(Error::invalid(
            "train",
            format!(
                "dataset has N={n}, M={m} but the architecture expects N={}, M={}",
                cfg.arch.n_samples,
                cfg.arch.grid_size()
            ),
        ));
    }
    train_on(cfg, data.items, progress)
}

pub fn train_on(
    cfg: &TrainConfig,
    mut items: Vec<DatasetItem>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(sigma) = cfg.label_sigma {
        let radar = RadarConfig::new(cfg.arch.n_samples, cfg.arch.oversample, cfg.seed)?;
        for it in &mut items {
            it.label = make_label(&it.scene, &radar, sigma)?;
        }
    }
    let batches_per_epoch = items.len() / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(Error::invalid(
            "train",
            format!("{} items do not fill one batch of {}", items.len(), cfg.batch_size),
        ));
    }
    let dir = &cfg.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let state_path = dir.join(STATE_FILE);

    let (mut net, mut adam, start_epoch) = if cfg.resume {
        let net = checkpoint::load(&ckpt_path)?;
        if *net.arch() != cfg.arch {
            return Err(Error::invalid("train", "checkpoint architecture differs from the config"));
        }
        let (adam, next_epoch) = load_state(&state_path, net.params())?;
        (net, adam, next_epoch)
    } else {
        let net = DssrNet::<f32>::new(cfg.arch, seed::derive(cfg.seed, "init", 0))?;
        let adam = AdamState::new(net.params());
        for f in [STEP_LOG_FILE, EPOCH_LOG_FILE] {
            let p = dir.join(f);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        (net, adam, 0)
    };

    let adam_cfg = cfg.adam();
    let probe_seed = seed::derive(cfg.seed, "probe", 0);
    let started = Instant::now();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in start_epoch..cfg.epochs {
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        order.shuffle(&mut seed::rng(cfg.seed, "shuffle", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut step_records = Vec::with_capacity(batches_per_epoch);
        for batch in order.chunks_exact(cfg.batch_size) {
            let refs: Vec<&DatasetItem> = batch.iter().map(|&i| &items[i]).collect();
            let loss = train_step(&mut net, &mut adam, &adam_cfg, &refs)?;
            epoch_loss += loss;
            step_records.push(StepRecord {
                step: adam.step,
                epoch,
                loss,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        }
        append_csv(
            &dir.join(STEP_LOG_FILE),
            "step,epoch,loss,wall_time_s",
            step_records
                .iter()
                .map(|r| format!("{},{},{},{:.3}", r.step, r.epoch, r.loss, r.wall_time_s)),
        )?;
        log.steps.extend(step_records);

        let last = epoch + 1 == cfg.epochs;
        let checkpoint_now = last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
        let probe = if checkpoint_now && cfg.probe_trials > 0 {
            Some(probe_success(&net, cfg.probe_trials, probe_seed)?)
        } else {
            None
        };
        if checkpoint_now {
            checkpoint::save(&net, &ckpt_path)?;
            save_state(&state_path, &adam, epoch + 1)?;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / batches_per_epoch as f64,
            probe_success: probe,
        };
        append_csv(
            &dir.join(EPOCH_LOG_FILE),
            "epoch,mean_loss,probe_success",
            std::iter::once(format!(
                "{},{},{}",
                record.epoch,
                record.mean_loss,
                record.probe_success.map(|p| p.to_string()).unwrap_or_default()
            )),
        )?;
        progress(&record);
        log.epochs.push(record);
    }
    if start_epoch >= cfg.epochs && !ckpt_path.exists() {
        checkpoint::save(&net, &ckpt_path)?;
    }
    Ok(TrainOutcome {
        net,
        log,
        checkpoint: ckpt_path,
    })
}

fn append_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(header);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

const STATE_MAGIC: &[u8; 4] = b"DSTS";

fn save_state(path: &Path, adam: &AdamState<f32>, next_epoch: usize) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&(next_epoch as u64).to_le_bytes());
    out.extend_from_slice(&adam.step.to_le_bytes());
    out.extend_from_slice(&(adam.m.len() as u64).to_le_bytes());
    for t in adam.m.iter().chain(&adam.v) {
        out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checkpoint::checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_state(path: &Path, params: &ParamStore<f32>) -> Result<(AdamState<f32>, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |why: &str| Error::CorruptCheckpoint(format!("{}: {why}", path.display()));
    if bytes.len() < 36 || &bytes[..4] != STATE_MAGIC {
        return Err(corrupt("not a training state file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if checkpoint::checksum(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut pos = 4;
    let u64_at = |pos: &mut usize| -> Result<u64> {
        let b = body.get(*pos..*pos + 8).ok_or_else(|| corrupt("truncated"))?;
        *pos += 8;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    };
    let next_epoch = u64_at(&mut pos)? as usize;
    let step = u64_at(&mut pos)?;
    let count = u64_at(&mut pos)? as usize;
    if count != params.len() {
        return Err(corrupt("moment count does not match the network"));
    }
    let mut tensors = Vec::with_capacity(2 * count);
    for i in 0..2 * count {
        let numel = u64_at(&mut pos)? as usize;
        let shape = params.values()[i % count].shape();
        if numel != shape.iter().product::<usize>() {
            return Err(corrupt("moment shape does not match the network"));
        }
        let raw = body.get(pos..pos + 4 * numel).ok_or_else(|| corrupt("truncated"))?;
        pos += 4 * numel;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    let v = tensors.split_off(count);
    Ok((AdamState { step, m: tensors, v }, next_epoch))
}
