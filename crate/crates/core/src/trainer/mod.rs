//! Adam, the plateau learning-rate schedule, the training loop with
//! validation-based model selection, and evaluation.

mod config;
mod eval;
mod suite;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;
use rand::seq::SliceRandom;

pub use config::{normalization_name, parse_normalization, TrainConfig};
pub use eval::{evaluate, ClassMetrics, EvalReport};
pub use suite::{gradient_suite, SuiteResult, MODEL_TOLERANCE, OP_TOLERANCE};

use crate::loss::{objective, WeightMatrix};
use crate::model::{build_model, Model};
use crate::pipeline::{id_hash, Example, Window};
use crate::tensor::{Graph, Mode, Tensor};
use crate::{derive_seed, engine_rng, Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, and the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_model(model: &Model<T>) -> Self {
        let sizes: Vec<usize> = model.params().iter().map(|p| p.value.numel()).collect();
        Self::new(&sizes)
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Contract(format!("adam: tensor {i} has mismatched sizes")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::cast(cfg.beta1), T::cast(cfg.beta2));
    let c1 = T::cast(1.0 - cfg.beta1.powi(t));
    let c2 = T::cast(1.0 - cfg.beta2.powi(t));
    let (lr, eps, one) = (T::cast(lr), T::cast(cfg.eps), T::one());
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// gone `patience` epochs without improving on its best by more than
/// `tolerance`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub patience: usize,
    pub factor: f64,
    pub tolerance: f64,
    pub min_lr: f64,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, tolerance: f64, min_lr: f64) -> Self {
        PlateauScheduler {
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            patience,
            factor,
            tolerance,
            min_lr,
        }
    }

    /// Records one epoch's loss and returns the learning rate for the next.
    pub fn step(&mut self, loss: f64) -> f64 {
        if loss < self.best - self.tolerance {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Merged reward matrix; its labels give the logit order.
    pub weights: WeightMatrix,
    /// Epochs completed.
    pub epoch: usize,
    pub best_score: Option<f64>,
    pub scheduler: PlateauScheduler,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_score: f64,
    pub val_bce: f64,
    pub best_score: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    weights: WeightMatrix,
    model: Model<f32>,
    adam: AdamState<f32>,
    scheduler: PlateauScheduler,
    train: Vec<Example>,
    val: Vec<Example>,
    epoch: usize,
    best: Option<Checkpoint>,
    history: Vec<EpochLog>,
}

/// Stacks windows into `[B, leads, len]` signals, `[B, 2]` aux features and
/// flat targets.
pub fn stack_windows<T: Real>(windows: &[Window], leads: usize) -> Result<(Tensor<T>, Tensor<T>, Vec<f64>)> {
    let len = windows.first().map_or(0, |w| w.data.len() / leads);
    let x = windows.iter().flat_map(|w| w.data.iter().map(|&v| T::cast(v as f64))).collect();
    let aux = windows.iter().flat_map(|w| w.aux.iter().map(|&v| T::cast(v))).collect();
    let targets = windows.iter().flat_map(|w| w.target.iter().copied()).collect();
    Ok((
        Tensor::new([windows.len(), leads, len], x)?,
        Tensor::new([windows.len(), 2], aux)?,
        targets,
    ))
}

impl Trainer {
    pub fn new(cfg: TrainConfig, weights: WeightMatrix, train: Vec<Example>, val: Vec<Example>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data(format!(
                "training needs records in both splits ({} train, {} val)",
                train.len(),
                val.len()
            )));
        }
        let k = weights.dim();
        if let Some(e) = train.iter().chain(&val).find(|e| e.target.len() != k) {
            return Err(Error::Data(format!("{} has {} targets, the weights have {k} classes", e.id, e.target.len())));
        }
        let model = build_model::<f32>(&cfg.model_config(k), cfg.variant, derive_seed(cfg.seed, 1))?;
        Ok(Self::resume_from(cfg, weights, model, train, val))
    }

    fn resume_from(cfg: TrainConfig, weights: WeightMatrix, model: Model<f32>, train: Vec<Example>, val: Vec<Example>) -> Self {
        Trainer {
            adam: AdamState::for_model(&model),
            scheduler: PlateauScheduler::new(cfg.lr, cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_tolerance, cfg.min_lr),
            cfg,
            weights,
            model,
            train,
            val,
            epoch: 0,
            best: None,
            history: Vec::new(),
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    pub fn history(&self) -> &[EpochLog] {
        &self.history
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// Snapshot of the current state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            weights: self.weights.clone(),
            epoch: self.epoch,
            best_score: self.best.as_ref().and_then(|b| b.best_score),
            scheduler: self.scheduler.clone(),
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// One optimizer step on `batch` (indices into the training examples);
    /// returns the batch objective before the update.
    pub fn train_step(&mut self, batch: &[usize], batch_index: usize) -> Result<f64> {
        let epoch_seed = derive_seed(self.cfg.seed, 1000 + self.epoch as u64);
        let leads = self.model.config().n_leads;
        let window = self.model.config().window;
        let windows: Vec<Window> = batch
            .iter()
            .map(|&i| {
                let ex = &self.train[i];
                let mut rng = engine_rng(derive_seed(epoch_seed, id_hash(&ex.id)));
                ex.training_window(window, &mut rng, &self.cfg.augment)
            })
            .collect();
        let (x, aux, targets) = stack_windows::<f32>(&windows, leads)?;
        let mut g = Graph::new();
        let params = self.model.bind(&mut g, true);
        let (xv, av) = (g.constant(x), g.constant(aux));
        let mut dropout_rng = engine_rng(derive_seed(epoch_seed, batch_index as u64));
        let logits = self.model.forward(&mut g, &params, xv, av, Mode::Train, &mut dropout_rng)?;
        let loss = objective(&mut g, logits, &targets, &self.weights)?;
        let value = g.value(loss).data()[0].as_f64();
        let abort = |reason: &str| Error::NumericalAbort {
            epoch: self.epoch,
            batch: batch_index,
            lr: self.scheduler.lr,
            reason: reason.into(),
        };
        if !value.is_finite() {
            return Err(abort("non-finite loss"));
        }
        g.backward(loss)?;
        let grads: Vec<Vec<f32>> = params
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.value.numel()], <[f32]>::to_vec))
            .collect();
        if grads.iter().flatten().any(|d| !d.is_finite()) {
            return Err(abort("non-finite gradient"));
        }
        drop(g);
        let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
        let mut param_refs: Vec<&mut [f32]> = self.model.params_mut().iter_mut().map(|p| p.value.data_mut()).collect();
        adam_step(&mut param_refs, &grad_refs, &mut self.adam, self.scheduler.lr, &self.cfg.adam)?;
        Ok(value)
    }

    /// Shuffled mini-batches over the training split, then the schedule
    /// update and validation.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut engine_rng(derive_seed(self.cfg.seed, 2000 + self.epoch as u64)));
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            total += self.train_step(batch, bi)? * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = total / count as f64;
        let lr = self.scheduler.lr;
        self.scheduler.step(train_loss);
        let report = self.validate()?;
        self.epoch += 1;
        let improved = self.best.as_ref().and_then(|b| b.best_score).is_none_or(|s| report.score > s);
        if improved {
            let mut snapshot = self.checkpoint();
            snapshot.best_score = Some(report.score);
            self.best = Some(snapshot);
        }
        let log = EpochLog {
            epoch: self.epoch,
            lr,
            train_loss,
            val_score: report.score,
            val_bce: report.bce,
            best_score: self.best.as_ref().and_then(|b| b.best_score).unwrap_or(report.score),
        };
        self.history.push(log.clone());
        Ok(log)
    }

    pub fn validate(&self) -> Result<EvalReport> {
        evaluate(&self.model, &self.val, &self.weights, &self.cfg)
    }

    /// Trains until `max_epochs` and returns the best checkpoint.
    pub fn fit(&mut self) -> Result<Checkpoint> {
        while self.epoch < self.cfg.max_epochs {
            self.run_epoch()?;
        }
        Ok(self.best.clone().unwrap_or_else(|| self.checkpoint()))
    }
}
