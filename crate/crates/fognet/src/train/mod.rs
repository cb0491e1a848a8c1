//! Training: losses and metrics, bias-corrected Adam, a reduce-on-plateau
//! schedule, and a fully seeded epoch loop.
//!
//! Everything downstream of a `(config, seed, dataset)` triple is
//! deterministic — parameter init, batch order, and every recorded history
//! value except wall-clock seconds.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BatchTargets, Graph, GraphBatch, GraphError, TaskKind};
use crate::layers::{Bound, Entry, ParamStore};
use crate::model::{Model, ModelError};
use crate::tensor::{real, BnMode, Gradients, Real, Tape, Tensor, TensorError, Var};


/// Adam first-moment decay.
pub const BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const BETA2: f64 = 0.999;
/// Adam denominator guard.
pub const ADAM_EPS: f64 = 1e-8;

/// The learning-rate grid a `--grid` sweep walks.
pub const GRID_LR: [f64; 4] = [1e-2, 5e-3, 1e-3, 5e-4];
/// The weight-decay grid a `--grid` sweep walks.
pub const GRID_WD: [f64; 3] = [1e-3, 1e-6, 0.0];

// ── configuration ────────────────────────────────────────────────────────

fn default_lr_factor() -> f64 {
    0.5
}
fn default_min_lr() -> f64 {
    1e-5
}
fn default_batch_size() -> usize {
    128
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub init_lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Epochs without validation improvement before the rate halves.
    pub patience: usize,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    /// Training stops once the rate drops below this.
    #[serde(default = "default_min_lr")]
    pub min_lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Weight classification losses by inverse class frequency per batch.
    #[serde(default)]
    pub class_weights: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |d: &str| {
            Err(TrainError::Config {
                detail: d.to_string(),
            })
        };
        if !(self.init_lr >= 0.0 && self.init_lr.is_finite()) {
            return fail("init_lr must be nonnegative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be nonnegative");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return fail("lr_factor must lie in (0, 1)");
        }
        if !(self.min_lr > 0.0) {
            return fail("min_lr must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be ≥ 1");
        }
        if self.patience == 0 {
            return fail("patience must be ≥ 1");
        }
        Ok(())
    }
}

// ── errors ───────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {detail}")]
    Config { detail: String },
    #[error("dataset mismatch: {detail}")]
    Data { detail: String },
    #[error("{what} split is empty")]
    EmptySplit { what: &'static str },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGrad { name: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("graph error: {0}")]
    Graph(#[from] GraphError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Json(#[from] serde_json::Error),
}

// ── metrics ──────────────────────────────────────────────────────────────

/// Fraction of matching labels.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / preds.len() as f64
}

/// F1 score of the positive class (label 1). When nothing is predicted
/// positive and nothing is positive, the score is defined as 0.
pub fn f1_positive(preds: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(preds.len(), labels.len());
    let tp = preds
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| p == 1 && l == 1)
        .count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let pred_pos = preds.iter().filter(|&&p| p == 1).count() as f64;
    let actual_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let precision = tp / pred_pos;
    let recall = tp / actual_pos;
    2.0 * precision * recall / (precision + recall)
}

/// Mean absolute error.
pub fn mean_absolute_error(preds: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(preds.len(), targets.len());
    if preds.is_empty() {
        return 0.0;
    }
    let s: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    s / preds.len() as f64
}

/// The headline metric each task reports.
pub fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::NodeClass | TaskKind::GraphClass => "accuracy",
        TaskKind::GraphRegress => "mae",
        TaskKind::EdgeClass => "f1_positive",
    }
}

fn argmax_rows<F: Real>(t: &Tensor<F>) -> Vec<usize> {
    let (n, k) = (t.rows(), t.cols());
    (0..n)
        .map(|i| {
            let row = &t.data()[i * k..(i + 1) * k];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(j, _)| j)
                .unwrap_or(0)
        })
        .collect()
}

// ── Adam ─────────────────────────────────────────────────────────────────

/// Bias-corrected Adam with L2 regularization folded into the gradient.
pub struct AdamState<F: Real> {
    /// First/second moments per store entry (empty tensors for buffers).
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u32,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let shape_of = |e: &Entry<F>| {
            if e.trainable {
                Tensor::zeros(e.value.shape())
            } else {
                Tensor::zeros(&[0])
            }
        };
        AdamState {
            m: store.entries().iter().map(shape_of).collect(),
            v: store.entries().iter().map(shape_of).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// One update over every trainable tensor. Gradients are read from the
    /// tape bindings; a parameter the loss never touched gets gradient zero
    /// (its moments still decay). Non-finite gradients abort by name.
    pub fn step(
        &mut self,
        store: &mut ParamStore<F>,
        bound: &Bound,
        grads: &Gradients<F>,
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), TrainError> {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let (b1, b2) = (real::<F>(BETA1), real::<F>(BETA2));
        let (ic1, ic2) = (real::<F>(1.0 / bc1), real::<F>(1.0 / bc2));
        let (lr, wd, eps) = (real::<F>(lr), real::<F>(weight_decay), real::<F>(ADAM_EPS));
        let one = F::one();

        for i in 0..store.entries().len() {
            if !store.entries()[i].trainable {
                continue;
            }
            let grad = bound.var_of_entry(i).and_then(|v| grads.get(v));
            let mut theta = store.entries()[i].value.clone();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..theta.numel() {
                let g0 = grad.map_or(F::zero(), |g| g.data()[j]);
                let g = g0 + wd * theta.data()[j];
                if !g.is_finite() {
                    return Err(TrainError::NonFiniteGrad {
                        name: store.entries()[i].name.clone(),
                    });
                }
                let mj = b1 * m.data()[j] + (one - b1) * g;
                let vj = b2 * v.data()[j] + (one - b2) * g * g;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let mhat = mj * ic1;
                let vhat = vj * ic2;
                theta.data_mut()[j] = theta.data()[j] - lr * mhat / (vhat.sqrt() + eps);
            }
            let id = store.find(&store.entries()[i].name).expect("entry exists");
            store.set_value(id, theta);
        }
        Ok(())
    }
}

// ── plateau schedule ─────────────────────────────────────────────────────

/// Halves the rate after `patience` epochs without validation improvement;
/// requests a stop once the rate falls below `min_lr`.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    since: usize,
}

impl PlateauScheduler {
    pub fn new(init_lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            lr: init_lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            since: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records the epoch's validation loss. Returns `true` when training
    /// must stop because the rate dropped below the floor.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since = 0;
            return false;
        }
        self.since += 1;
        if self.since >= self.patience {
            self.lr *= self.factor;
            self.since = 0;
            if self.lr < self.min_lr {
                return true;
            }
        }
        false
    }
}

// ── history ──────────────────────────────────────────────────────────────

/// One epoch of recorded history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Task metric on the validation split.
    pub metric: f64,
    /// Rate in force during this epoch.
    pub lr: f64,
    /// Wall-clock epoch time; the only nondeterministic field.
    pub seconds: f64,
}

/// Writes history as `epoch,train_loss,val_loss,metric,lr,seconds`.
pub fn write_history_csv(path: &Path, history: &[MetricsRecord]) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,train_loss,val_loss,metric,lr,seconds")?;
    for r in history {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.metric, r.lr, r.seconds
        )?;
    }
    Ok(())
}

/// Writes history as one JSON object per line.
pub fn write_history_jsonl(path: &Path, history: &[MetricsRecord]) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    for r in history {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

// ── loss assembly ────────────────────────────────────────────────────────

/// Class labels of a batch for a classification task.
fn class_labels<'a>(batch: &'a GraphBatch, task: TaskKind) -> Result<&'a [usize], TrainError> {
    match (task, &batch.targets) {
        (TaskKind::NodeClass, BatchTargets::NodeLabels(l)) => Ok(l),
        (TaskKind::GraphClass, BatchTargets::GraphLabels(l)) => Ok(l),
        (TaskKind::EdgeClass, BatchTargets::EdgeLabels(l)) => Ok(l),
        _ => Err(TrainError::Data {
            detail: format!("targets do not fit a {task} task"),
        }),
    }
}

/// Inverse-frequency weights `N / (K · count_c)`; absent classes get 0.
fn inverse_frequency_weights<F: Real>(labels: &[usize], k: usize) -> Vec<F> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                F::zero()
            } else {
                real(n / (k as f64 * c as f64))
            }
        })
        .collect()
}

/// Builds the task loss over a forward pass; returns the loss var and the
/// number of items it averages over.
fn batch_loss<F: Real>(
    tape: &mut Tape<F>,
    prediction: Var,
    batch: &GraphBatch,
    task: TaskKind,
    class_weights: bool,
) -> Result<(Var, usize), TrainError> {
    match task {
        TaskKind::GraphRegress => {
            let BatchTargets::GraphScalars(t) = &batch.targets else {
                return Err(TrainError::Data {
                    detail: "targets do not fit a graph-regress task".to_string(),
                });
            };
            let target = Tensor::from_f64(&Tensor::<f64>::matrix(t.len(), 1, t.clone())?);
            let loss = tape.mae(prediction, &target)?;
            Ok((loss, t.len()))
        }
        _ => {
            let labels = class_labels(batch, task)?;
            let k = tape.value(prediction).cols();
            let weights = class_weights.then(|| inverse_frequency_weights::<F>(labels, k));
            let loss = tape.cross_entropy(prediction, labels, weights.as_deref())?;
            Ok((loss, labels.len()))
        }
    }
}

// ── evaluation ───────────────────────────────────────────────────────────

/// Loss and metric of a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
    /// Items the loss averages over (nodes, graphs, or edge slots).
    pub n_items: usize,
}

/// Runs the model over `graphs` in evaluation mode, in fixed order, in
/// batches of `batch_size`. The metric is computed globally over the whole
/// split, so any batch partition yields the same result up to rounding.
pub fn evaluate<F: Real>(
    model: &mut Model<F>,
    graphs: &[Graph],
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    if graphs.is_empty() {
        return Err(TrainError::EmptySplit { what: "evaluation" });
    }
    let task = model.config.task;
    let mut loss_sum = 0.0;
    let mut items = 0usize;
    let mut pred_labels: Vec<usize> = Vec::new();
    let mut true_labels: Vec<usize> = Vec::new();
    let mut pred_values: Vec<f64> = Vec::new();
    let mut true_values: Vec<f64> = Vec::new();

    for chunk in graphs.chunks(batch_size.max(1)) {
        let batch = GraphBatch::from_graphs(chunk)?;
        let mut tape = Tape::new();
        let fw = model.forward(&mut tape, &batch, BnMode::Eval)?;
        let (loss, n) = batch_loss(&mut tape, fw.prediction, &batch, task, false)?;
        loss_sum += tape.value(loss).item().to_f64().unwrap_or(f64::NAN) * n as f64;
        items += n;
        let pred = tape.value(fw.prediction);
        match task {
            TaskKind::GraphRegress => {
                let BatchTargets::GraphScalars(t) = &batch.targets else {
                    unreachable!("batch_loss validated the targets");
                };
                pred_values.extend(pred.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
                true_values.extend_from_slice(t);
            }
            _ => {
                pred_labels.extend(argmax_rows(pred));
                true_labels.extend_from_slice(class_labels(&batch, task)?);
            }
        }
    }

    let metric = match task {
        TaskKind::NodeClass | TaskKind::GraphClass => accuracy(&pred_labels, &true_labels),
        TaskKind::EdgeClass => f1_positive(&pred_labels, &true_labels),
        TaskKind::GraphRegress => mean_absolute_error(&pred_values, &true_values),
    };
    Ok(Evaluation {
        loss: loss_sum / items as f64,
        metric,
        n_items: items,
    })
}

// ── the loop ─────────────────────────────────────────────────────────────

/// Why training ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The schedule drove the rate below its floor.
    LrFloor,
    /// The epoch budget ran out.
    MaxEpochs,
}

/// Result of a completed run. The model is left holding the parameters of
/// the best validation epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

/// Trains `model` on the train split, validating every epoch.
///
/// Batch order reshuffles each epoch from the config seed. The best
/// parameters (by validation loss) are restored into the model before
/// returning. Non-finite training losses abort with the offending epoch.
pub fn train<F: Real>(
    model: &mut Model<F>,
    train_graphs: &[Graph],
    val_graphs: &[Graph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_graphs.is_empty() {
        return Err(TrainError::EmptySplit { what: "train" });
    }
    if val_graphs.is_empty() {
        return Err(TrainError::EmptySplit { what: "validation" });
    }

    let task = model.config.task;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut sched = PlateauScheduler::new(cfg.init_lr, cfg.lr_factor, cfg.patience, cfg.min_lr);

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.store.snapshot();
    let mut stop = StopReason::MaxEpochs;

    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = sched.lr();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut items = 0usize;
        for idx_chunk in order.chunks(cfg.batch_size) {
            let chunk: Vec<Graph> = idx_chunk.iter().map(|&i| train_graphs[i].clone()).collect();
            let batch = GraphBatch::from_graphs(&chunk)?;
            let mut tape = Tape::new();
            let fw = model.forward(&mut tape, &batch, BnMode::Train)?;
            let (loss, n) =
                batch_loss(&mut tape, fw.prediction, &batch, task, cfg.class_weights)?;
            let loss_value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
            if !loss_value.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            loss_sum += loss_value * n as f64;
            items += n;
            let grads = tape.backward(loss)?;
            adam.step(&mut model.store, &fw.bound, &grads, lr, cfg.weight_decay)?;
        }
        let train_loss = loss_sum / items as f64;

        let val = evaluate(model, val_graphs, cfg.batch_size)?;
        if !val.loss.is_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        history.push(MetricsRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            metric: val.metric,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val.loss < best_val {
            best_val = val.loss;
            best_epoch = epoch;
            best_params = model.store.snapshot();
        }
        if sched.observe(val.loss) {
            stop = StopReason::LrFloor;
            break;
        }
    }

    model.store.restore(&best_params);
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss: best_val,
        stop,
    })
}
