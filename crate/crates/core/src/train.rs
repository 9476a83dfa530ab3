//! Mini-batch training with Adam or SGD, patience-based early stopping and
//! best-checkpoint restore.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetFile, Split};
use crate::nn::{self, EstimatorError, LayerGrads, Mode, ModelSpec, ModelWeights, Real, TensorMap};
use crate::rng::{self, Domain};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// A validation loss must drop by more than this to count as improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "adaptive-moment", alias = "adam")]
    Adam,
    #[serde(rename = "plain-sgd", alias = "sgd")]
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    10
}
fn default_seed() -> u64 {
    2021
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_precision() -> Precision {
    Precision::F32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    /// Record zero wall time so training records are byte-reproducible.
    #[serde(default)]
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch(),
            learning_rate: default_lr(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: default_seed(),
            optimizer: default_optimizer(),
            precision: default_precision(),
            deterministic: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("optimizer keys do not match the model: `{0}`")]
    KeyMismatch(String),
    #[error("dataset has an empty {0:?} split")]
    EmptySplit(Split),
    #[error("dataset does not fit the model: {0}")]
    Shape(String),
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String, record: Box<TrainRecord> },
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Optimizer moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub step: u64,
    pub m: TensorMap<T>,
    pub v: TensorMap<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, weights: &ModelWeights<T>) -> Self {
        let zeros = || -> TensorMap<T> {
            weights.params.iter().map(|(k, t)| (k.clone(), crate::nn::Tensor::zeros(&t.shape))).collect()
        };
        let (m, v) = match kind {
            OptimizerKind::Adam => (zeros(), zeros()),
            OptimizerKind::Sgd => (TensorMap::new(), TensorMap::new()),
        };
        OptimizerState { kind, step: 0, m, v }
    }
}

/// One optimizer step in place.
pub fn update_step<T: Real>(
    weights: &mut ModelWeights<T>,
    grads: &LayerGrads<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<(), TrainError> {
    if grads.grads.len() != weights.params.len() {
        return Err(TrainError::KeyMismatch("gradient and parameter sets differ in size".into()));
    }
    for (k, g) in &grads.grads {
        match weights.params.get(k) {
            Some(p) if p.shape == g.shape => {}
            _ => return Err(TrainError::KeyMismatch(k.clone())),
        }
    }
    state.step += 1;
    let lr_t = T::lit(lr);
    match state.kind {
        OptimizerKind::Sgd => {
            for (k, g) in &grads.grads {
                let p = weights.params.get_mut(k).expect("checked");
                for (w, d) in p.data.iter_mut().zip(&g.data) {
                    *w -= lr_t * *d;
                }
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
            let c1 = T::lit(1.0 - ADAM_BETA1.powi(state.step as i32));
            let c2 = T::lit(1.0 - ADAM_BETA2.powi(state.step as i32));
            let eps = T::lit(ADAM_EPS);
            for (k, g) in &grads.grads {
                let m = state.m.get_mut(k).ok_or_else(|| TrainError::KeyMismatch(k.clone()))?;
                let v = state.v.get_mut(k).ok_or_else(|| TrainError::KeyMismatch(k.clone()))?;
                let p = weights.params.get_mut(k).expect("checked");
                for (((w, d), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                    *mi = b1 * *mi + (T::one() - b1) * *d;
                    *vi = b2 * *vi + (T::one() - b2) * *d * *d;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *w -= lr_t * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
}

impl TrainRecord {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min)
    }

    /// `epoch,train_loss,val_loss,seconds` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in &self.epochs {
            writeln!(s, "{},{:e},{:e},{:.3}", e.epoch, e.train_loss, e.val_loss, e.seconds).expect("string write");
        }
        s
    }
}

/// Patience rule: stop once `patience` consecutive epochs fail to beat the
/// best validation loss by more than [`IMPROVEMENT_TOL`].
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Waiting,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best - IMPROVEMENT_TOL {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Waiting
            }
        }
    }
}

/// Masked MSE over a split in inference mode, pooled over all valid bins.
pub fn evaluate_loss<T: Real>(
    weights: &ModelWeights<T>,
    spec: &ModelSpec,
    data: &DatasetFile,
    items: &[usize],
    batch_size: usize,
) -> Result<f64, EstimatorError> {
    let mut sum = 0.0;
    let mut count = 0.0;
    for chunk in items.chunks(batch_size.max(1)) {
        let batch = data.batch::<T>(chunk);
        let (pred, _) = nn::forward(weights, spec, &batch.input, Mode::Infer)?;
        let valid = batch.mask.iter().filter(|m| **m != T::zero()).count() as f64 * data.n_ant() as f64;
        if valid > 0.0 {
            sum += nn::loss(&pred, &batch.label, &batch.mask)?.as_f64() * valid;
            count += valid;
        }
    }
    if count == 0.0 {
        return Err(EstimatorError::AllMasked);
    }
    Ok(sum / count)
}

pub struct TrainOutcome<T> {
    pub weights: ModelWeights<T>,
    pub record: TrainRecord,
}

fn check_fit(data: &DatasetFile, spec: &ModelSpec) -> Result<(), TrainError> {
    let [f, a, c] = spec.input_dims;
    if f != data.f_pad() || a != data.n_ant() || c != 2 {
        return Err(TrainError::Shape(format!(
            "model expects ({f}, {a}, {c}), dataset has ({}, {}, 2)",
            data.f_pad(),
            data.n_ant()
        )));
    }
    Ok(())
}

/// Train from `init` and return the best-validation weights.
/// `on_epoch` is called after every epoch.
pub fn train<T: Real>(
    data: &DatasetFile,
    spec: &ModelSpec,
    config: &TrainConfig,
    init: ModelWeights<T>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    spec.validate().map_err(|e| TrainError::Shape(e.to_string()))?;
    check_fit(data, spec)?;
    let train_items: Vec<usize> = data.split_items(Split::Train).collect();
    let val_items: Vec<usize> = data.split_items(Split::Val).collect();
    if train_items.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val_items.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }

    let mut weights = init;
    let mut best = weights.clone();
    let mut opt = OptimizerState::new(config.optimizer, &weights);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut record = TrainRecord { epochs: Vec::new(), stop_reason: None, best_epoch: 0 };
    let diverged = |epoch: usize, detail: String, record: &TrainRecord| TrainError::Diverged {
        epoch,
        detail,
        record: Box::new(record.clone()),
    };

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut order = train_items.clone();
        order.shuffle(&mut rng::stream(config.seed, Domain::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = data.batch::<T>(chunk);
            let mut drop = rng::stream(config.seed, Domain::Dropout, ((epoch as u64) << 32) | bi as u64);
            let (loss, grads, tape) = nn::loss_and_grads(&weights, spec, &batch, &mut drop, T::one())
                .map_err(|e| diverged(epoch, e.to_string(), &record))?;
            if !loss.is_finite() {
                return Err(diverged(epoch, format!("non-finite training loss in batch {bi}"), &record));
            }
            weights.apply_running_stats(&tape);
            update_step(&mut weights, &grads, &mut opt, config.learning_rate)?;
            loss_sum += loss.as_f64() * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_items.len() as f64;
        let val_loss = evaluate_loss(&weights, spec, data, &val_items, config.batch_size)
            .map_err(|e| diverged(epoch, e.to_string(), &record))?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, "non-finite validation loss".into(), &record));
        }
        let seconds = if config.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
        let rec = EpochRecord { epoch, train_loss, val_loss, seconds };
        on_epoch(&rec);
        record.epochs.push(rec);
        match stopper.observe(epoch, val_loss) {
            Verdict::Improved => best = weights.clone(),
            Verdict::Waiting => {}
            Verdict::Stop => {
                record.stop_reason = Some(StopReason::EarlyStop);
                break;
            }
        }
    }
    if record.stop_reason.is_none() {
        record.stop_reason = Some(StopReason::MaxEpochs);
    }
    record.best_epoch = stopper.best_epoch;
    Ok(TrainOutcome { weights: best, record })
}
