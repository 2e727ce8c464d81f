//! Loss, optimizers, learning-rate schedules, and the training loop.

use std::fs;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::{Mode, RngState};
use crate::metrics::argmax_rows;
use crate::model::Model;
use crate::tape::{ReduceOp, Tape, Var};
use crate::tensor::Tensor;
use crate::Element;

/// −(1/N) Σ Σ y·log(p + 1e-12), recorded on the tape.
pub fn categorical_cross_entropy<E: Element>(
    tape: &Tape<E>,
    probs: Var,
    onehot: Var,
) -> Result<Var> {
    let ps = tape.shape(probs);
    let ys = tape.shape(onehot);
    if ps != ys || ps.len() != 2 {
        return Err(Error::Shape(format!("loss expects matching [N,K], got {ps:?} vs {ys:?}")));
    }
    let n = ps[0];
    let shifted = tape.add_scalar(probs, E::from_f64(1e-12))?;
    let logp = tape.log(shifted)?;
    let weighted = tape.mul(logp, onehot)?;
    let total = tape.reduce(ReduceOp::Sum, weighted, &[0, 1], false)?;
    tape.scale(total, E::from_f64(-1.0 / n as f64))
}

/// Plain-tensor version for evaluation passes that need no gradients.
pub fn cross_entropy_value(probs: &Tensor<f32>, labels: &[usize]) -> f64 {
    let k = probs.shape()[1];
    let n = labels.len();
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        total -= (probs.data()[i * k + l] as f64 + 1e-12).ln();
    }
    total / n as f64
}

// ── optimizers ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
    Rmsprop,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_RHO: f64 = 0.9;

/// Per-parameter moment state plus the step counter and current lr.
pub struct OptimizerState<E: Element> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub t: u64,
    m: IndexMap<String, Tensor<E>>,
    v: IndexMap<String, Tensor<E>>,
}

impl<E: Element> OptimizerState<E> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerState { kind, lr, t: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    /// One optimizer step over every trainable model parameter.
    /// `grads` must hold an entry per trainable parameter name.
    pub fn apply(
        &mut self,
        model: &mut Model<E>,
        grads: &IndexMap<String, Tensor<E>>,
    ) -> Result<()> {
        self.t += 1;
        for (block, p) in model.params.iter_mut() {
            for (key, slot) in p.tensors.iter_mut() {
                if !slot.trainable {
                    continue;
                }
                let name = format!("{block}/{key}");
                let g = grads
                    .get(&name)
                    .ok_or_else(|| Error::Tape(format!("missing gradient for {name}")))?;
                self.update_one(&name, &mut slot.tensor, g)?;
            }
        }
        Ok(())
    }

    fn update_one(&mut self, name: &str, param: &mut Tensor<E>, grad: &Tensor<E>) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "{name}: gradient shape {:?} vs parameter {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p = E::from_f64(p.as_f64() - self.lr * g.as_f64());
                }
            }
            OptimizerKind::Rmsprop => {
                let v = self
                    .v
                    .entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(param.shape()));
                for ((p, &g), vi) in
                    param.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut().iter_mut())
                {
                    let g = g.as_f64();
                    let vv = RMSPROP_RHO * vi.as_f64() + (1.0 - RMSPROP_RHO) * g * g;
                    *vi = E::from_f64(vv);
                    *p = E::from_f64(p.as_f64() - self.lr * g / (vv.sqrt() + ADAM_EPS));
                }
            }
            OptimizerKind::Adam => {
                let m = self
                    .m
                    .entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(param.shape()));
                let v = self
                    .v
                    .entry(name.to_string())
                    .or_insert_with(|| Tensor::zeros(param.shape()));
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for ((p, &g), (mi, vi)) in param
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                {
                    let g = g.as_f64();
                    let mm = ADAM_BETA1 * mi.as_f64() + (1.0 - ADAM_BETA1) * g;
                    let vv = ADAM_BETA2 * vi.as_f64() + (1.0 - ADAM_BETA2) * g * g;
                    *mi = E::from_f64(mm);
                    *vi = E::from_f64(vv);
                    let update = self.lr * (mm / bc1) / ((vv / bc2).sqrt() + ADAM_EPS);
                    *p = E::from_f64(p.as_f64() - update);
                }
            }
        }
        Ok(())
    }

    /// Single-tensor step for callers outside the model structure.
    pub fn step_tensor(&mut self, name: &str, param: &mut Tensor<E>, grad: &Tensor<E>) -> Result<()> {
        self.t += 1;
        self.update_one(name, param, grad)
    }
}

// ── schedulers ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulerKind {
    Plateau,
    Exponential,
    Cosine,
}

impl SchedulerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plateau" => Ok(SchedulerKind::Plateau),
            "exponential" => Ok(SchedulerKind::Exponential),
            "cosine" => Ok(SchedulerKind::Cosine),
            other => Err(Error::Config(format!("unknown scheduler {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::Plateau => "plateau",
            SchedulerKind::Exponential => "exponential",
            SchedulerKind::Cosine => "cosine",
        }
    }
}

pub const PLATEAU_FACTOR: f64 = 0.7;
pub const PLATEAU_PATIENCE: usize = 7;
pub const PLATEAU_MIN_LR: f64 = 1e-6;
pub const PLATEAU_THRESHOLD: f64 = 1e-4;
pub const EXPONENTIAL_DECAY: f64 = 0.96;

#[derive(Clone, Debug)]
pub struct SchedulerState {
    pub kind: SchedulerKind,
    pub lr: f64,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub since_improve: usize,
    pub epoch: usize,
    pub total_epochs: usize,
}

impl SchedulerState {
    pub fn new(kind: SchedulerKind, lr: f64, total_epochs: usize) -> Self {
        SchedulerState {
            kind,
            lr,
            initial_lr: lr,
            min_lr: PLATEAU_MIN_LR,
            factor: PLATEAU_FACTOR,
            patience: PLATEAU_PATIENCE,
            best: None,
            since_improve: 0,
            epoch: 0,
            total_epochs,
        }
    }

    /// Advance one epoch with its validation loss; returns the lr for
    /// the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        self.epoch += 1;
        match self.kind {
            SchedulerKind::Plateau => {
                match self.best {
                    None => {
                        self.best = Some(val_loss);
                        self.since_improve = 0;
                    }
                    Some(best) if val_loss < best - PLATEAU_THRESHOLD => {
                        self.best = Some(val_loss);
                        self.since_improve = 0;
                    }
                    Some(_) => {
                        self.since_improve += 1;
                        if self.since_improve >= self.patience {
                            self.lr = (self.lr * self.factor).max(self.min_lr);
                            self.since_improve = 0;
                        }
                    }
                }
                self.lr
            }
            SchedulerKind::Exponential => {
                self.lr = (self.initial_lr * EXPONENTIAL_DECAY.powi(self.epoch as i32))
                    .max(self.min_lr);
                self.lr
            }
            SchedulerKind::Cosine => {
                let t = self.epoch.min(self.total_epochs) as f64 / self.total_epochs.max(1) as f64;
                self.lr = self.min_lr
                    + 0.5 * (self.initial_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t).cos());
                self.lr
            }
        }
    }
}

// ── training loop ────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            scheduler: SchedulerKind::Plateau,
            seed: 43,
            factor: PLATEAU_FACTOR,
            patience: PLATEAU_PATIENCE,
            min_lr: PLATEAU_MIN_LR,
        }
    }
}

/// In-memory image set: one [H,W,C] tensor per sample.
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:e},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr, r.seconds
            ));
        }
        fs::write(path, out).map_err(|e| Error::file(path, e))
    }
}

fn stack_batch(ds: &Dataset, idxs: &[usize]) -> Tensor<f32> {
    let s = ds.images[idxs[0]].shape();
    let mut data = Vec::with_capacity(idxs.len() * ds.images[idxs[0]].len());
    for &i in idxs {
        data.extend_from_slice(ds.images[i].data());
    }
    Tensor::new(vec![idxs.len(), s[0], s[1], s[2]], data).unwrap()
}

fn onehot_batch(labels: &[usize], idxs: &[usize], k: usize) -> Tensor<f32> {
    let mut t = Tensor::<f32>::zeros(&[idxs.len(), k]);
    for (row, &i) in idxs.iter().enumerate() {
        t.data_mut()[row * k + labels[i]] = 1.0;
    }
    t
}

/// Infer-mode evaluation: (mean loss, accuracy).
pub fn evaluate_split(
    model: &mut Model<f32>,
    ds: &Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let saved_mode = model.mode;
    model.set_mode(Mode::Infer);
    let mut rng = RngState::new(0, 0); // unused in infer mode
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let idxs: Vec<usize> = (0..ds.len()).collect();
    for chunk in idxs.chunks(batch_size) {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(stack_batch(ds, chunk));
        let pass = model.forward(&tape, x, None, &mut rng)?;
        let probs = tape.value(pass.probs);
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        total_loss += cross_entropy_value(&probs, &labels) * chunk.len() as f64;
        for (pred, &want) in argmax_rows(&probs).iter().zip(&labels) {
            correct += usize::from(*pred == want);
        }
    }
    model.set_mode(saved_mode);
    Ok((total_loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

/// Full training run. Weights with the best validation loss are
/// restored into the model before returning.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let k = model.cfg.num_classes;
    let mut optimizer = OptimizerState::<f32>::new(cfg.optimizer, cfg.lr);
    let mut scheduler = SchedulerState::new(cfg.scheduler, cfg.lr, cfg.epochs);
    scheduler.factor = cfg.factor;
    scheduler.patience = cfg.patience;
    scheduler.min_lr = cfg.min_lr;
    let mut log = TrainLog::default();
    let mut best_val = f64::INFINITY;
    let mut best_snapshot = model.export_state();

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        model.set_mode(Mode::Train);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        RngState::new(cfg.seed, 1_000 + epoch as u64).shuffle(&mut order);
        let mut drop_rng = RngState::new(cfg.seed, 2_000 + epoch as u64);

        let lr_this_epoch = optimizer.lr;
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let tape = Tape::<f32>::new();
            let x = tape.leaf(stack_batch(train_set, chunk));
            let y = tape.leaf(onehot_batch(&train_set.labels, chunk, k));
            let pass = model.forward(&tape, x, None, &mut drop_rng)?;
            let loss = categorical_cross_entropy(&tape, pass.probs, y)?;
            let loss_v = tape.value(loss).scalar_value() as f64;
            epoch_loss += loss_v * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let mut by_name = IndexMap::new();
            for (name, var) in &pass.param_vars {
                let shape = tape.shape(*var);
                by_name.insert(name.clone(), grads.get_or_zeros(*var, &shape));
            }
            optimizer.apply(model, &by_name)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let (val_loss, val_acc) = evaluate_split(model, val_set, cfg.batch_size)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_snapshot = model.export_state();
        }
        optimizer.lr = scheduler.step(val_loss);

        log.records.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_acc,
            lr: lr_this_epoch,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    model.import_state(&best_snapshot)?;
    model.set_mode(Mode::Infer);
    Ok(log)
}
