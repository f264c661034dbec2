//! Multilabel training objective and the discrete challenge score.
//!
//! The objective is binary cross-entropy minus a differentiable version of
//! the challenge reward `tᵀ W p / n`, where the normalizer `n` replaces the
//! logical OR of truth and prediction by `t + p - t·p`.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;

use crate::tensor::{CustomOp, Graph, Tensor, Var};
use crate::{Error, Real, Result};

/// Guard for the normalizer when truth and prediction are both empty.
pub const EPS_N: f64 = 1e-8;

/// Probabilities are clamped to `[EPS_P, 1 - EPS_P]` inside the log.
pub const EPS_P: f64 = 1e-7;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Square class-reward matrix; `w[i][j]` rewards predicting class `j` when
/// class `i` is true.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    labels: Vec<String>,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(Error::Data("weight matrix has no classes".into()));
        }
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Data(format!("weight matrix must be {k}x{k} to match its labels")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("non-finite reward in row {}", labels[i])));
            }
            if row.iter().any(|&v| v > row[i]) {
                return Err(Error::Data(format!("diagonal of row {} is not the row maximum", labels[i])));
            }
        }
        Ok(WeightMatrix {
            labels,
            w: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(labels: Vec<String>) -> Self {
        let k = labels.len();
        let rows = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self::new(labels, rows).expect("identity is valid")
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.dim() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.dim();
        &self.w[i * k..(i + 1) * k]
    }

    fn same_class(&self, a: usize, b: usize) -> bool {
        let k = self.dim();
        (0..k).all(|j| self.get(a, j) == self.get(b, j) && self.get(j, a) == self.get(j, b))
    }
}

/// Result of merging classes with identical rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedClasses {
    /// Reduced matrix; a merged class is labelled with its identifiers joined by `|`.
    pub matrix: WeightMatrix,
    /// Identifiers of every merged class, in matrix order.
    pub groups: Vec<Vec<String>>,
    index: BTreeMap<String, usize>,
}

impl MergedClasses {
    pub fn class_of(&self, identifier: &str) -> Option<usize> {
        self.index.get(identifier).copied()
    }

    pub fn dim(&self) -> usize {
        self.groups.len()
    }

    /// Binary target over merged classes; unscored identifiers are ignored.
    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Vec<f64> {
        let mut t = vec![0.0; self.dim()];
        for l in labels {
            if let Some(i) = self.class_of(l.as_ref()) {
                t[i] = 1.0;
            }
        }
        t
    }

    pub fn is_scored<S: AsRef<str>>(&self, labels: &[S]) -> bool {
        labels.iter().any(|l| self.class_of(l.as_ref()).is_some())
    }
}

/// Merges classes whose rows and columns in `W` are elementwise identical.
/// A matrix label may already be a `|`-joined group; its parts are kept.
pub fn merge_identical_classes(wm: &WeightMatrix) -> MergedClasses {
    let k = wm.dim();
    let mut rep: Vec<usize> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in 0..k {
        match rep.iter().position(|&r| wm.same_class(r, i)) {
            Some(g) => members[g].push(i),
            None => {
                rep.push(i);
                members.push(vec![i]);
            }
        }
    }
    let groups: Vec<Vec<String>> = members
        .iter()
        .map(|m| m.iter().flat_map(|&i| wm.labels[i].split('|').map(String::from)).collect())
        .collect();
    let labels = groups.iter().map(|g| g.join("|")).collect();
    let rows = rep.iter().map(|&i| rep.iter().map(|&j| wm.get(i, j)).collect()).collect();
    let mut index = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        for id in g {
            index.insert(id.clone(), gi);
        }
    }
    MergedClasses {
        matrix: WeightMatrix::new(labels, rows).expect("sub-matrix of a valid matrix"),
        groups,
        index,
    }
}

/// `n = Σ (t + p - t·p)`.
pub fn soft_or_norm(t: &[f64], p: &[f64]) -> f64 {
    t.iter().zip(p).map(|(&t, &p)| t + p - t * p).sum()
}

fn reward(t: &[f64], p: &[f64], wm: &WeightMatrix) -> f64 {
    let mut acc = 0.0;
    for (i, &ti) in t.iter().enumerate() {
        if ti != 0.0 {
            acc += ti * wm.row(i).iter().zip(p).map(|(&w, &pj)| w * pj).sum::<f64>();
        }
    }
    acc
}

/// `tᵀ W p / max(n, EPS_N)`.
pub fn challenge_term(t: &[f64], p: &[f64], wm: &WeightMatrix) -> f64 {
    reward(t, p, wm) / soft_or_norm(t, p).max(EPS_N)
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(EPS_P, 1.0 - EPS_P)
}

/// `-tᵀ log p - (1 - t)ᵀ log(1 - p)` with clamped probabilities.
pub fn bce(t: &[f64], p: &[f64]) -> f64 {
    t.iter()
        .zip(p)
        .map(|(&t, &p)| {
            let p = clamp_p(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

/// `bce - challenge_term`: equal weighting, minimizing rewards the challenge term.
pub fn combined_loss(t: &[f64], p: &[f64], wm: &WeightMatrix) -> f64 {
    bce(t, p) - challenge_term(t, p, wm)
}

/// Gradient of [`challenge_term`] with respect to `p`.
pub fn challenge_term_grad(t: &[f64], p: &[f64], wm: &WeightMatrix) -> Vec<f64> {
    let k = t.len();
    let n = soft_or_norm(t, p);
    let a = reward(t, p, wm);
    let mut tw = vec![0.0; k];
    for (i, &ti) in t.iter().enumerate() {
        if ti != 0.0 {
            tw.iter_mut().zip(wm.row(i)).for_each(|(acc, &w)| *acc += ti * w);
        }
    }
    if n > EPS_N {
        (0..k).map(|j| (tw[j] * n - a * (1.0 - t[j])) / (n * n)).collect()
    } else {
        tw.iter().map(|v| v / EPS_N).collect()
    }
}

/// Gradient of [`combined_loss`] with respect to `p`.
pub fn combined_loss_grad(t: &[f64], p: &[f64], wm: &WeightMatrix) -> Vec<f64> {
    let c = challenge_term_grad(t, p, wm);
    t.iter()
        .zip(p)
        .zip(c)
        .map(|((&t, &p), dc)| {
            let inside = (EPS_P..=1.0 - EPS_P).contains(&p);
            let db = if inside { -t / p + (1.0 - t) / (1.0 - p) } else { 0.0 };
            db - dc
        })
        .collect()
}

pub fn predict(p: &[f64], threshold: f64) -> Vec<f64> {
    p.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect()
}

/// How per-record rewards and normalizers are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    /// Mean over records of `tᵀ W y / |t ∨ y|`.
    #[default]
    PerRecord,
    /// `Σ tᵀ W y / Σ |t ∨ y|` over the whole set.
    Pooled,
}

/// Challenge reward of one record with binary prediction `y`; 0 when both
/// truth and prediction are empty.
pub fn record_score(t: &[f64], y: &[f64], wm: &WeightMatrix) -> f64 {
    let n = or_count(t, y);
    if n == 0.0 {
        0.0
    } else {
        reward(t, y, wm) / n
    }
}

fn or_count(t: &[f64], y: &[f64]) -> f64 {
    t.iter().zip(y).filter(|(&t, &y)| t != 0.0 || y != 0.0).count() as f64
}

pub fn discrete_challenge_score<R: AsRef<[f64]>>(
    truth: &[R],
    predicted: &[R],
    wm: &WeightMatrix,
    normalization: Normalization,
) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} truth rows but {} prediction rows",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Data("cannot score an empty set".into()));
    }
    let k = wm.dim();
    for (t, y) in truth.iter().zip(predicted) {
        if t.as_ref().len() != k || y.as_ref().len() != k {
            return Err(Error::Data(format!("class dimension differs from the weight matrix ({k})")));
        }
    }
    let pairs = truth.iter().zip(predicted).map(|(t, y)| (t.as_ref(), y.as_ref()));
    Ok(match normalization {
        Normalization::PerRecord => pairs.map(|(t, y)| record_score(t, y, wm)).sum::<f64>() / truth.len() as f64,
        Normalization::Pooled => {
            let (num, den) = pairs.fold((0.0, 0.0), |(a, b), (t, y)| (a + reward(t, y, wm), b + or_count(t, y)));
            if den == 0.0 {
                0.0
            } else {
                num / den
            }
        }
    })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Batch-mean training objective on logits. The cross-entropy part is
/// evaluated from logits (`softplus(z) - t z`), which equals [`bce`] at
/// `p = sigmoid(z)` wherever the clamp is inactive and keeps a gradient
/// when a logit saturates.
struct LogitObjective {
    targets: Vec<f64>,
    weights: WeightMatrix,
}

impl LogitObjective {
    fn value(&self, z: &[f64]) -> f64 {
        let k = self.weights.dim();
        let rows = z.len() / k;
        let mut total = 0.0;
        for (zr, tr) in z.chunks_exact(k).zip(self.targets.chunks_exact(k)) {
            let p: Vec<f64> = zr.iter().map(|&v| sigmoid(v)).collect();
            let b: f64 = zr.iter().zip(tr).map(|(&z, &t)| softplus(z) - t * z).sum();
            total += b - challenge_term(tr, &p, &self.weights);
        }
        total / rows as f64
    }
}

impl<T: Real> CustomOp<T> for LogitObjective {
    fn name(&self) -> &'static str {
        "multilabel_objective"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>> {
        let k = self.weights.dim();
        let z: Vec<f64> = inputs[0].data().iter().map(|v| v.as_f64()).collect();
        let rows = z.len() / k;
        let scale = grad_out[0].as_f64() / rows as f64;
        let mut dz = Vec::with_capacity(z.len());
        for (zr, tr) in z.chunks_exact(k).zip(self.targets.chunks_exact(k)) {
            let p: Vec<f64> = zr.iter().map(|&v| sigmoid(v)).collect();
            let dc = challenge_term_grad(tr, &p, &self.weights);
            for j in 0..k {
                let d = (p[j] - tr[j]) - dc[j] * p[j] * (1.0 - p[j]);
                dz.push(T::cast(d * scale));
            }
        }
        vec![dz]
    }
}

/// Records the batch-mean objective of `logits: [B, K]` against flat binary
/// `targets` (`B·K` values).
pub fn objective<T: Real>(g: &mut Graph<T>, logits: Var, targets: &[f64], wm: &WeightMatrix) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != wm.dim() || targets.len() != shape[0] * shape[1] {
        return Err(Error::Shape {
            op: "objective",
            detail: format!("logits {shape:?}, {} targets, {} classes", targets.len(), wm.dim()),
        });
    }
    let op = LogitObjective {
        targets: targets.to_vec(),
        weights: wm.clone(),
    };
    let z: Vec<f64> = g.value(logits).data().iter().map(|v| v.as_f64()).collect();
    let value = T::cast(op.value(&z));
    Ok(g.custom(&[logits], Tensor::scalar(value), Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| i.to_string()).collect()
    }

    #[test]
    fn rejects_malformed_matrices() {
        assert!(WeightMatrix::new(labels(2), vec![vec![1.0, 0.0]]).is_err());
        assert!(WeightMatrix::new(labels(2), vec![vec![0.5, 1.0], vec![0.0, 1.0]]).is_err());
        assert!(WeightMatrix::new(Vec::new(), Vec::new()).is_err());
    }

    #[test]
    fn scoring_rejects_dimension_mismatch() {
        let wm = WeightMatrix::identity(labels(3));
        let t = [vec![1.0, 0.0]];
        assert!(discrete_challenge_score(&t, &t, &wm, Normalization::PerRecord).is_err());
    }
}
