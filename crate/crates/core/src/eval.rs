//! Victim classifiers (multinomial logistic regression and one-vs-rest
//! linear SVM) trained by deterministic full-batch gradient descent,
//! plus detection/accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const L2_STRENGTH: f64 = 1e-3;
pub const GD_STEPS: usize = 500;
pub const GD_LR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VictimKind {
    Logistic,
    Svm,
}

impl VictimKind {
    pub fn parse(s: &str) -> Result<VictimKind> {
        match s {
            "logistic" | "lr" => Ok(VictimKind::Logistic),
            "svm" => Ok(VictimKind::Svm),
            other => Err(Error::Config(format!("unknown victim kind `{other}`"))),
        }
    }
}

/// W-way linear scorer; prediction is the argmax class, ties toward the
/// lowest class id.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>, // [class][feature]
    pub bias: Vec<f64>,
    pub kind: VictimKind,
}

impl LinearModel {
    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| b + dot(w, x))
            .collect()
    }

    /// 1-based predicted class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let scores = self.scores(x);
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = c;
            }
        }
        best + 1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains the selected victim by full-batch gradient descent: fixed step
/// count, L2 regularization, halving backtracking whenever a step would
/// increase the loss. Deterministic (zero initialization; the seed is
/// accepted for interface uniformity).
pub fn train_linear(data: &Dataset, kind: VictimKind, _seed: u64) -> Result<LinearModel> {
    if data.num_classes < 2 {
        return Err(Error::input("victim training needs at least 2 classes"));
    }
    let x: Vec<Vec<f64>> = data.samples.iter().map(|s| s.to_dense(data.dim)).collect();
    let w = data.num_classes;
    let d = data.dim;
    let mut model = LinearModel {
        weights: vec![vec![0.0; d]; w],
        bias: vec![0.0; w],
        kind,
    };
    let mut loss = full_loss(&model, &x, &data.labels);
    for _ in 0..GD_STEPS {
        let (gw, gb) = full_gradient(&model, &x, &data.labels);
        // Backtrack from the base rate: halve until the loss stops
        // increasing.
        let mut step = GD_LR;
        loop {
            let cand = apply_step(&model, &gw, &gb, step);
            let cand_loss = full_loss(&cand, &x, &data.labels);
            if cand_loss <= loss + 1e-12 {
                model = cand;
                loss = cand_loss;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Ok(model); // gradient too noisy to descend further
            }
        }
    }
    Ok(model)
}

fn apply_step(
    model: &LinearModel,
    gw: &[Vec<f64>],
    gb: &[f64],
    step: f64,
) -> LinearModel {
    let mut out = model.clone();
    for c in 0..out.weights.len() {
        for l in 0..out.weights[c].len() {
            out.weights[c][l] -= step * gw[c][l];
        }
        out.bias[c] -= step * gb[c];
    }
    out
}

/// Mean per-sample loss plus L2 penalty. Logistic: multinomial
/// cross-entropy. Svm: one-vs-rest hinge summed over classes.
pub fn full_loss(model: &LinearModel, x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = x.len() as f64;
    let mut total = 0.0;
    for (xi, &yi) in x.iter().zip(labels) {
        total += sample_loss(model, xi, yi);
    }
    let reg: f64 = model
        .weights
        .iter()
        .map(|w| w.iter().map(|v| v * v).sum::<f64>())
        .sum();
    total / n + 0.5 * L2_STRENGTH * reg
}

fn sample_loss(model: &LinearModel, xi: &[f64], yi: usize) -> f64 {
    let scores = model.scores(xi);
    match model.kind {
        VictimKind::Logistic => {
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            lse - scores[yi - 1]
        }
        VictimKind::Svm => {
            let mut loss = 0.0;
            for (c, &s) in scores.iter().enumerate() {
                let t = if c + 1 == yi { 1.0 } else { -1.0 };
                loss += (1.0 - t * s).max(0.0);
            }
            loss
        }
    }
}

fn full_gradient(
    model: &LinearModel,
    x: &[Vec<f64>],
    labels: &[usize],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let w = model.weights.len();
    let d = model.weights[0].len();
    let mut gw = vec![vec![0.0; d]; w];
    let mut gb = vec![0.0; w];
    for (xi, &yi) in x.iter().zip(labels) {
        let coeffs = sample_score_grad(model, xi, yi);
        for c in 0..w {
            if coeffs[c] != 0.0 {
                for l in 0..d {
                    gw[c][l] += coeffs[c] * xi[l];
                }
                gb[c] += coeffs[c];
            }
        }
    }
    let n = x.len() as f64;
    for c in 0..w {
        for l in 0..d {
            gw[c][l] = gw[c][l] / n + L2_STRENGTH * model.weights[c][l];
        }
        gb[c] /= n;
    }
    (gw, gb)
}

/// d(loss_i)/d(score_c): softmax minus one-hot for logistic, hinge
/// subgradient for SVM.
fn sample_score_grad(model: &LinearModel, xi: &[f64], yi: usize) -> Vec<f64> {
    let scores = model.scores(xi);
    let w = scores.len();
    match model.kind {
        VictimKind::Logistic => {
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            (0..w)
                .map(|c| exps[c] / z - if c + 1 == yi { 1.0 } else { 0.0 })
                .collect()
        }
        VictimKind::Svm => (0..w)
            .map(|c| {
                let t = if c + 1 == yi { 1.0 } else { -1.0 };
                if 1.0 - t * scores[c] > 0.0 {
                    -t
                } else {
                    0.0
                }
            })
            .collect(),
    }
}

/// Per-sample gradient of the unregularized loss with respect to the
/// flattened (weights, bias) parameters. Row layout: class-major weights
/// then biases. Used by the SVD baseline's outlier scoring.
pub fn sample_gradient(model: &LinearModel, xi: &[f64], yi: usize) -> Vec<f64> {
    let coeffs = sample_score_grad(model, xi, yi);
    let d = xi.len();
    let w = coeffs.len();
    let mut g = Vec::with_capacity(w * d + w);
    for &c in &coeffs {
        for &x in xi {
            g.push(c * x);
        }
    }
    g.extend(coeffs.iter());
    let _ = (w, d);
    g
}

pub fn test_accuracy(model: &LinearModel, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let correct = test
        .samples
        .iter()
        .zip(&test.labels)
        .filter(|(s, &y)| model.predict(&s.to_dense(test.dim)) == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    /// Absent when the ground truth contains no poisoned samples.
    pub tpr: Option<f64>,
    pub fpr: f64,
}

/// TPR/FPR of a detected-id set against ground-truth poison flags.
pub fn detection_metrics(detected_ids: &[usize], truth: &[bool]) -> Metrics {
    let poisoned = truth.iter().filter(|&&t| t).count();
    let clean = truth.len() - poisoned;
    let det_poisoned = detected_ids.iter().filter(|&&i| truth[i]).count();
    let det_clean = detected_ids.len() - det_poisoned;
    Metrics {
        accuracy: None,
        tpr: if poisoned > 0 {
            Some(det_poisoned as f64 / poisoned as f64)
        } else {
            None
        },
        fpr: if clean > 0 {
            det_clean as f64 / clean as f64
        } else {
            0.0
        },
    }
}
