//! Loss, parameter selection, optimizer and the training loop.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape};
use crate::backbone::Dropout;
use crate::checkpoint::Checkpoint;
use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::model::{Batch, CachedTokens, Model, ModelConfig, ModelShape, TokenSource};
use crate::params::{ParamGroup, ParamStore};

/// `‖Y − Ŷ‖²_F / (C·F)`.
pub fn mse_loss(y: &Array2<f64>, y_hat: &Array2<f64>) -> Result<f64> {
    if y.dim() != y_hat.dim() {
        return Err(Error::Shape(format!("Y is {:?} but Ŷ is {:?}", y.dim(), y_hat.dim())));
    }
    if y.is_empty() {
        return Err(Error::Empty("mse of an empty matrix".into()));
    }
    if y.iter().chain(y_hat.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mse input contains NaN or infinity".into()));
    }
    let sq: f64 = y.iter().zip(y_hat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sq / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Plug-in and head only.
    #[default]
    FrozenBackbone,
    FullFinetune,
    /// Backbone and head on target-only windows.
    Pretrain,
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen_backbone" => Ok(TrainMode::FrozenBackbone),
            "full_finetune" => Ok(TrainMode::FullFinetune),
            "pretrain" => Ok(TrainMode::Pretrain),
            other => Err(Error::Config(format!(
                "unknown training mode {other:?} (expected frozen_backbone, full_finetune or pretrain)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Epochs between decays.
    pub step: usize,
    pub gamma: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { step: 10, gamma: 0.5 }
    }
}

impl Schedule {
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        base * self.gamma.powi((epoch / self.step) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Run a finite-difference gradient check on the first training window
    /// before the first epoch.
    pub grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::FrozenBackbone,
            lr: 2e-4,
            schedule: Schedule::default(),
            epochs: 100,
            batch_size: 64,
            seed: 0,
            patience: 10,
            grad_check: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be a non-negative number, got {}", self.lr)));
        }
        if !(self.schedule.gamma > 0.0 && self.schedule.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "schedule.gamma must lie in (0, 1], got {}",
                self.schedule.gamma
            )));
        }
        if self.schedule.step == 0 || self.batch_size == 0 {
            return Err(Error::Config("schedule.step and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameter names split by whether the optimizer may touch them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroups {
    pub trainable: Vec<String>,
    pub frozen: Vec<String>,
}

fn mode_trains(mode: TrainMode, group: ParamGroup) -> bool {
    match mode {
        TrainMode::FrozenBackbone => !group.is_backbone(),
        TrainMode::FullFinetune => true,
        TrainMode::Pretrain => !group.is_fusion(),
    }
}

pub fn select_trainables(model: &Model, mode: TrainMode) -> ParamGroups {
    let (trainable, frozen): (Vec<_>, Vec<_>) = model
        .store
        .iter()
        .map(|(_, p)| (p.name.clone(), mode_trains(mode, p.group)))
        .partition(|(_, t)| *t);
    ParamGroups {
        trainable: trainable.into_iter().map(|(n, _)| n).collect(),
        frozen: frozen.into_iter().map(|(n, _)| n).collect(),
    }
}

/// Sets every parameter's trainable flag from `groups`.
pub fn apply_groups(model: &mut Model, groups: &ParamGroups) {
    for p in model.store.iter_mut() {
        p.trainable = groups.trainable.contains(&p.name);
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Matrix::zeros(p.value.dim())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &crate::autodiff::Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
    pub checkpoint: Option<PathBuf>,
    pub wall_clock_secs: f64,
    pub trainable_params: usize,
    pub total_params: usize,
}

impl TrainReport {
    /// `(train, val)` loss per epoch.
    pub fn loss_curve(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect()
    }
}

/// Trains `model` under `cfg.mode`. The parameters with the lowest
/// validation loss are kept and, when `checkpoint` is given, saved there.
pub fn fit(
    model: &mut Model,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    let groups = select_trainables(model, cfg.mode);
    apply_groups(model, &groups);
    fit_trainable(model, train, val, cfg, checkpoint)
}

/// Same loop as [`fit`] but leaves the trainable flags as they are.
/// When no backbone parameter is trainable the decoded tokens are computed
/// once per window with the backbone in eval mode and reused.
pub fn fit_trainable(
    model: &mut Model,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty(format!(
            "training needs windows in both splits (train {}, val {})",
            train.len(),
            val.len()
        )));
    }
    let started = Instant::now();
    let use_fusion = cfg.mode != TrainMode::Pretrain && model.has_fusion();
    let frozen_backbone = model.store.iter().all(|(_, p)| !(p.group.is_backbone() && p.trainable));

    if cfg.grad_check {
        let err = grad_check(model, &train[0], 1e-5)?;
        info!("gradient check: max relative error {err:.3e}");
    }

    let cache = |windows: &[WindowSample]| -> Result<Option<Vec<CachedTokens>>> {
        if frozen_backbone {
            windows.iter().map(|w| model.cache_tokens(w)).collect::<Result<Vec<_>>>().map(Some)
        } else {
            Ok(None)
        }
    };
    let train_cache = cache(train)?;
    let val_cache = cache(val)?;

    let mut adam = Adam::new(&model.store);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let dropout_rate = model.cfg.backbone.dropout;

    let mut records = Vec::new();
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None;
    let mut bad_epochs = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(cfg.lr, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&WindowSample> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_samples(&samples, &model.cfg)?;
            let cached: Option<Vec<&CachedTokens>> = train_cache.as_ref().map(|c| chunk.iter().map(|&i| &c[i]).collect());
            let (loss, grads) = {
                let mut tape = Tape::new(&model.store);
                let source = match &cached {
                    Some(c) => TokenSource::Cached(c),
                    None => TokenSource::Compute(Dropout::on(dropout_rate, &mut dropout_rng)),
                };
                let y = model.forward(&mut tape, &batch, source, use_fusion)?;
                let loss = tape.mse(y, batch.y_target.clone());
                (tape.value(loss)[[0, 0]], tape.backward(loss))
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            adam.step(&mut model.store, &grads, lr);
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = evaluate_loss(model, val, val_cache.as_deref(), use_fusion, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        debug!("epoch {epoch}: lr {lr:.3e} train {train_loss:.6} val {val_loss:.6}");
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, snapshot(&model.store)));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_loss) = match best {
        Some((epoch, loss, values)) => {
            for (p, v) in model.store.iter_mut().zip(values) {
                p.value = v;
            }
            (Some(epoch), Some(loss))
        }
        None => (None, None),
    };
    let checkpoint = match checkpoint {
        Some(path) => {
            Checkpoint::new(model.clone()).save(path)?;
            Some(path.to_path_buf())
        }
        None => None,
    };
    Ok(TrainReport {
        mode: cfg.mode,
        epochs: records,
        best_epoch,
        best_val_loss,
        stopped_early,
        checkpoint,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        trainable_params: model.store.count_trainable(),
        total_params: model.store.count(),
    })
}

fn snapshot(store: &ParamStore) -> Vec<Matrix> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

/// Mean squared error over `windows`, dropout off.
pub fn evaluate_loss(
    model: &Model,
    windows: &[WindowSample],
    cache: Option<&[CachedTokens]>,
    use_fusion: bool,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, chunk) in windows.chunks(batch_size.max(1)).enumerate() {
        let samples: Vec<&WindowSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&samples, &model.cfg)?;
        let mut tape = Tape::inference(&model.store);
        let cached: Option<Vec<&CachedTokens>> =
            cache.map(|c| c[k * batch_size..k * batch_size + chunk.len()].iter().collect());
        let source = match &cached {
            Some(c) => TokenSource::Cached(c),
            None => TokenSource::Compute(Dropout::off()),
        };
        let y = model.forward(&mut tape, &batch, source, use_fusion)?;
        let diff = tape.value(y) - &batch.y_target;
        total += diff.iter().map(|d| d * d).sum::<f64>();
        count += diff.len();
    }
    Ok(total / count.max(1) as f64)
}

fn loss_of(model: &Model, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::inference(&model.store);
    let y = model.forward(&mut tape, batch, TokenSource::Compute(Dropout::off()), model.has_fusion())?;
    let diff = tape.value(y) - &batch.y_target;
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// Largest norm-wise relative error between the analytic gradient of the
/// loss and central differences with step `eps`, taken per trainable
/// tensor as `‖a − n‖ / max(‖a‖, ‖n‖)`. A tensor whose analytic and
/// numeric gradients are both exactly zero scores 0.
///
/// Some gradients vanish identically (attention key biases cancel in the
/// softmax) while their difference quotients carry rounding noise around
/// `1e-11`. Both norms below [`GRAD_NOISE_FLOOR`] therefore also score 0.
pub fn grad_check(model: &Model, sample: &WindowSample, eps: f64) -> Result<f64> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {eps}")));
    }
    let batch = Batch::from_samples(&[sample], &model.cfg)?;
    let grads = {
        let mut tape = Tape::new(&model.store);
        let y = model.forward(&mut tape, &batch, TokenSource::Compute(Dropout::off()), model.has_fusion())?;
        let loss = tape.mse(y, batch.y_target.clone());
        tape.backward(loss)
    };
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let shape = model.store.get(id).value.dim();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Matrix::zeros(shape));
        let mut numeric = Matrix::zeros(shape);
        for idx in ndarray::indices(shape) {
            let idx = (idx.0, idx.1);
            let orig = probe.store.get(id).value[idx];
            probe.store.get_mut(id).value[idx] = orig + eps;
            let up = loss_of(&probe, &batch)?;
            probe.store.get_mut(id).value[idx] = orig - eps;
            let down = loss_of(&probe, &batch)?;
            probe.store.get_mut(id).value[idx] = orig;
            numeric[idx] = (up - down) / (2.0 * eps);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Gradient norm below which a tensor counts as having no gradient.
pub const GRAD_NOISE_FLOOR: f64 = 1e-8;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with `0/0 = 0`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let norm = |m: &Matrix| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < GRAD_NOISE_FLOOR {
        0.0
    } else {
        norm(&(analytic - numeric)) / scale
    }
}

/// Trains a covariate-free backbone on target-only windows.
pub fn pretrain(
    model_cfg: &ModelConfig,
    train: &[WindowSample],
    val: &[WindowSample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<(Model, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Empty("pretraining corpus is empty".into()));
    }
    let mut bcfg = model_cfg.clone().without_fusion();
    bcfg.shape = ModelShape::new(train[0].x_target.nrows(), 0, 0);
    let mut model = Model::new(bcfg, cfg.seed)?;
    let strip = |ws: &[WindowSample]| ws.iter().map(WindowSample::without_covariates).collect::<Vec<_>>();
    let (train, val) = (strip(train), strip(val));
    let cfg = TrainConfig {
        mode: TrainMode::Pretrain,
        ..cfg.clone()
    };
    let report = if cfg.epochs == 0 {
        if let Some(path) = checkpoint {
            Checkpoint::new(model.clone()).save(path)?;
        }
        TrainReport {
            mode: TrainMode::Pretrain,
            epochs: Vec::new(),
            best_epoch: None,
            best_val_loss: None,
            stopped_early: false,
            checkpoint: checkpoint.map(Path::to_path_buf),
            wall_clock_secs: 0.0,
            trainable_params: model.store.count_trainable(),
            total_params: model.store.count(),
        }
    } else {
        fit(&mut model, &train, &val, &cfg, checkpoint)?
    };
    Ok((model, report))
}
