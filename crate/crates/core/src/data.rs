//! Core dataset types: feature vectors (dense reals or sparse counts),
//! labeled training sets, and the [0,1]-scale-then-center preprocessing
//! used for continuous features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Continuous,
    Count,
}

/// A single sample. Dense vectors carry real-valued features; sparse
/// vectors carry non-negative word counts as (index, count) pairs with
/// strictly ascending 0-based indices and counts > 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureVector {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, u32)>),
}

impl FeatureVector {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureVector::Dense(_) => FeatureKind::Continuous,
            FeatureVector::Sparse(_) => FeatureKind::Count,
        }
    }

    pub fn dense(&self) -> Result<&[f64]> {
        match self {
            FeatureVector::Dense(v) => Ok(v),
            FeatureVector::Sparse(_) => Err(Error::input("expected dense features, got counts")),
        }
    }

    pub fn sparse(&self) -> Result<&[(usize, u32)]> {
        match self {
            FeatureVector::Sparse(v) => Ok(v),
            FeatureVector::Dense(_) => Err(Error::input("expected count features, got dense")),
        }
    }

    /// Materializes the sample as a flat f64 vector of length `dim`.
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        match self {
            FeatureVector::Dense(v) => v.clone(),
            FeatureVector::Sparse(entries) => {
                let mut out = vec![0.0; dim];
                for &(idx, cnt) in entries {
                    out[idx] = cnt as f64;
                }
                out
            }
        }
    }

    pub fn total_count(&self) -> u64 {
        match self {
            FeatureVector::Dense(_) => 0,
            FeatureVector::Sparse(entries) => entries.iter().map(|&(_, c)| c as u64).sum(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            FeatureVector::Dense(v) => {
                if v.len() != dim {
                    return Err(Error::input(format!(
                        "sample has {} features, dataset dimension is {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::input("non-finite feature value"));
                }
            }
            FeatureVector::Sparse(entries) => {
                if entries.is_empty() {
                    return Err(Error::input("empty document rejected"));
                }
                let mut prev = None;
                for &(idx, cnt) in entries {
                    if idx >= dim {
                        return Err(Error::input(format!(
                            "sparse index {idx} out of range for dimension {dim}"
                        )));
                    }
                    if cnt == 0 {
                        return Err(Error::input("zero count in sparse sample"));
                    }
                    if let Some(p) = prev {
                        if idx <= p {
                            return Err(Error::input("sparse indices must be strictly ascending"));
                        }
                    }
                    prev = Some(idx);
                }
            }
        }
        Ok(())
    }
}

/// A labeled training or test set. Labels are 1-based class ids in
/// `1..=num_classes`. `poison_truth`, when present, marks which samples
/// were injected by an attack (ground truth for scoring defenses).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub poison_truth: Option<Vec<bool>>,
    pub feature_kind: FeatureKind,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant: matching
    /// lengths, labels in range with every class nonempty, uniform
    /// feature kind and dimension, nonempty sparse samples.
    pub fn new(
        samples: Vec<FeatureVector>,
        labels: Vec<usize>,
        poison_truth: Option<Vec<bool>>,
        feature_kind: FeatureKind,
        dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::input("dataset is empty"));
        }
        if samples.len() != labels.len() {
            return Err(Error::input(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(truth) = &poison_truth {
            if truth.len() != samples.len() {
                return Err(Error::input("poison_truth length mismatch"));
            }
        }
        if num_classes < 1 {
            return Err(Error::input("num_classes must be >= 1"));
        }
        let mut class_counts = vec![0usize; num_classes];
        for &y in &labels {
            if y < 1 || y > num_classes {
                return Err(Error::input(format!(
                    "label {y} out of range 1..={num_classes}"
                )));
            }
            class_counts[y - 1] += 1;
        }
        if let Some(c) = class_counts.iter().position(|&n| n == 0) {
            return Err(Error::input(format!("class {} has no samples", c + 1)));
        }
        for s in &samples {
            if s.kind() != feature_kind {
                return Err(Error::input("mixed dense and sparse samples"));
            }
            s.validate(dim)?;
        }
        Ok(Dataset {
            samples,
            labels,
            poison_truth,
            feature_kind,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples labeled `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_samples(&self, class: usize) -> Vec<&FeatureVector> {
        self.class_indices(class)
            .into_iter()
            .map(|i| &self.samples[i])
            .collect()
    }

    /// Keeps the samples where `keep[i]` is true, preserving order.
    /// Used for sanitized outputs; a class may end up empty here, so the
    /// per-class nonemptiness check is deliberately not re-run.
    pub fn restrict(&self, keep: &[bool]) -> Dataset {
        assert_eq!(keep.len(), self.len());
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        let mut truth = self.poison_truth.as_ref().map(|_| Vec::new());
        for i in 0..self.len() {
            if keep[i] {
                samples.push(self.samples[i].clone());
                labels.push(self.labels[i]);
                if let (Some(t), Some(src)) = (&mut truth, &self.poison_truth) {
                    t.push(src[i]);
                }
            }
        }
        Dataset {
            samples,
            labels,
            poison_truth: truth,
            feature_kind: self.feature_kind,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }
}

/// Preprocessing constants for continuous features: per-feature [0,1]
/// scaling over the training set followed by centering at the training
/// mean. Stored so the same transform can be reapplied to test data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub range: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Scaler {
    pub fn fit(data: &Dataset) -> Result<Scaler> {
        if data.feature_kind != FeatureKind::Continuous {
            return Err(Error::input("scaler only applies to continuous features"));
        }
        let d = data.dim;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for s in &data.samples {
            for (l, &x) in s.dense()?.iter().enumerate() {
                min[l] = min[l].min(x);
                max[l] = max[l].max(x);
            }
        }
        let range: Vec<f64> = (0..d).map(|l| max[l] - min[l]).collect();
        let mut mean = vec![0.0; d];
        for s in &data.samples {
            for (l, &x) in s.dense()?.iter().enumerate() {
                mean[l] += scale_one(x, min[l], range[l]);
            }
        }
        let n = data.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
        Ok(Scaler { min, range, mean })
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|l| scale_one(x[l], self.min[l], self.range[l]) - self.mean[l])
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(data.len());
        for s in &data.samples {
            samples.push(FeatureVector::Dense(self.apply_vec(s.dense()?)));
        }
        Ok(Dataset {
            samples,
            ..data.clone()
        })
    }
}

fn scale_one(x: f64, min: f64, range: f64) -> f64 {
    if range > 0.0 {
        (x - min) / range
    } else {
        0.0
    }
}
