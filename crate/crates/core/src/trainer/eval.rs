use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;

use super::{stack_windows, TrainConfig};
use crate::loss::{bce, discrete_challenge_score, predict, WeightMatrix};
use crate::model::Model;
use crate::pipeline::{Example, Window};
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    /// `None` when the class is never predicted.
    pub precision: Option<f64>,
    /// `None` when the class never occurs.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ids: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub score: f64,
    /// Mean per-record binary cross-entropy.
    pub bce: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Center-cropped eval-mode predictions over `examples`, thresholded and
/// scored against `weights`.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    weights: &WeightMatrix,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let k = weights.dim();
    if model.config().n_classes != k {
        return Err(Error::Data(format!(
            "model predicts {} classes, the weights have {k}",
            model.config().n_classes
        )));
    }
    if examples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    if let Some(e) = examples.iter().find(|e| e.target.len() != k) {
        return Err(Error::Data(format!("{} has {} targets, the weights have {k} classes", e.id, e.target.len())));
    }
    let leads = model.config().n_leads;
    let mut probabilities = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(cfg.batch_size.max(1)) {
        let windows: Vec<Window> = chunk.iter().map(|e| e.eval_window(model.config().window)).collect();
        let (x, aux, _) = stack_windows::<T>(&windows, leads)?;
        let logits = model.infer(&x, &aux)?;
        for row in logits.data().chunks(k) {
            probabilities.push(row.iter().map(|z| 1.0 / (1.0 + (-z.as_f64()).exp())).collect::<Vec<f64>>());
        }
    }
    if probabilities.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::NumericalAbort {
            epoch: 0,
            batch: 0,
            lr: 0.0,
            reason: "non-finite probabilities in evaluation".into(),
        });
    }
    let targets: Vec<Vec<f64>> = examples.iter().map(|e| e.target.clone()).collect();
    let predictions: Vec<Vec<f64>> = probabilities.iter().map(|p| predict(p, cfg.threshold)).collect();
    let score = discrete_challenge_score(&targets, &predictions, weights, cfg.normalization)?;
    let bce_mean = targets.iter().zip(&probabilities).map(|(t, p)| bce(t, p)).sum::<f64>() / examples.len() as f64;
    let per_class = (0..k)
        .map(|c| {
            let (mut tp, mut pred, mut pos) = (0.0, 0.0, 0.0);
            for (t, y) in targets.iter().zip(&predictions) {
                tp += t[c] * y[c];
                pred += y[c];
                pos += t[c];
            }
            ClassMetrics {
                label: weights.labels()[c].clone(),
                precision: (pred > 0.0).then(|| tp / pred),
                recall: (pos > 0.0).then(|| tp / pos),
            }
        })
        .collect();
    Ok(EvalReport {
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        probabilities,
        targets,
        predictions,
        score,
        bce: bce_mean,
        per_class,
    })
}
