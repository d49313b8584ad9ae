//! Comparison defenses: KNN plurality relabeling and SVD-based
//! gradient-outlier removal for linear victims.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{sample_gradient, train_linear, VictimKind};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub distance: Distance,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 10,
            distance: Distance::Euclidean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    Euclidean,
    Cosine,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SvdConfig {
    pub epsilon: f64,
    pub beta: usize,
}

impl Default for SvdConfig {
    fn default() -> Self {
        SvdConfig {
            epsilon: 0.1,
            beta: 2,
        }
    }
}

/// Relabeling defense output: the relabeled data plus which samples
/// changed (the "detected" set for scoring).
#[derive(Clone, Debug)]
pub struct KnnOutcome {
    pub dataset: Dataset,
    pub relabeled_ids: Vec<usize>,
}

fn distance(kind: Distance, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        Distance::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>(),
        Distance::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

/// Replaces every label by the plurality label of its K nearest
/// neighbors (self excluded). All votes are computed against the
/// original labels and applied simultaneously. Ties break toward the
/// sample's own label, then the lowest class id.
pub fn knn_defend(data: &Dataset, cfg: &KnnConfig) -> Result<KnnOutcome> {
    if data.len() <= cfg.k {
        return Err(Error::input(format!(
            "need more than K={} samples, have {}",
            cfg.k,
            data.len()
        )));
    }
    if cfg.k < 1 {
        return Err(Error::input("K must be >= 1"));
    }
    let dense: Vec<Vec<f64>> = data.samples.iter().map(|s| s.to_dense(data.dim)).collect();
    let mut new_labels = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        // Nearest neighbors by partial sort; distance ties resolved by
        // index for determinism.
        let mut dists: Vec<(f64, usize)> = (0..data.len())
            .filter(|&j| j != i)
            .map(|j| (distance(cfg.distance, &dense[i], &dense[j]), j))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; data.num_classes];
        for &(_, j) in dists.iter().take(cfg.k) {
            votes[data.labels[j] - 1] += 1;
        }
        let top = *votes.iter().max().unwrap();
        let own = data.labels[i];
        let winner = if votes[own - 1] == top {
            own
        } else {
            votes.iter().position(|&v| v == top).unwrap() + 1
        };
        new_labels.push(winner);
    }
    let relabeled_ids: Vec<usize> = (0..data.len())
        .filter(|&i| new_labels[i] != data.labels[i])
        .collect();
    let dataset = Dataset {
        labels: new_labels,
        ..data.clone()
    };
    Ok(KnnOutcome {
        dataset,
        relabeled_ids,
    })
}

/// Removal defense output: the reduced data plus removed original ids.
#[derive(Clone, Debug)]
pub struct SvdOutcome {
    pub dataset: Dataset,
    pub removed_ids: Vec<usize>,
}

/// Top right singular vector of a centered matrix (rows x cols), via
/// power iteration on the smaller of the two Gram matrices. Unit norm.
fn top_right_singular_vector(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let d = rows[0].len();
    // Work in the smaller space: if n < d iterate v in row space via
    // G = A A^T, else directly on A^T A.
    let iters = 100;
    if n <= d {
        // G[i][j] = <row_i, row_j>
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                g[i][j] = s;
                g[j][i] = s;
            }
        }
        let mut u = vec![1.0 / (n as f64).sqrt(); n];
        for _ in 0..iters {
            let mut next = vec![0.0; n];
            for i in 0..n {
                next[i] = g[i].iter().zip(&u).map(|(a, b)| a * b).sum();
            }
            let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            for x in &mut next {
                *x /= norm;
            }
            u = next;
        }
        // v = A^T u, normalized.
        let mut v = vec![0.0; d];
        for (row, &ui) in rows.iter().zip(&u) {
            for (l, &x) in row.iter().enumerate() {
                v[l] += ui * x;
            }
        }
        normalize(&mut v);
        v
    } else {
        let mut c = vec![vec![0.0; d]; d];
        for row in rows {
            for a in 0..d {
                if row[a] != 0.0 {
                    for b in 0..d {
                        c[a][b] += row[a] * row[b];
                    }
                }
            }
        }
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        for _ in 0..iters {
            let mut next = vec![0.0; d];
            for a in 0..d {
                next[a] = c[a].iter().zip(&v).map(|(x, y)| x * y).sum();
            }
            let norm: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            for x in &mut next {
                *x /= norm;
            }
            v = next;
        }
        v
    }
}

fn normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v {
            *x /= norm;
        }
    }
}

/// Per-class outlier scores for one retraining step: squared projection
/// of each sample's centered loss gradient onto the class gradient
/// matrix's top right singular vector.
fn step_scores(data: &Dataset, kind: VictimKind, seed: u64) -> Result<Vec<f64>> {
    let model = train_linear(data, kind, seed)?;
    let dense: Vec<Vec<f64>> = data.samples.iter().map(|s| s.to_dense(data.dim)).collect();
    let mut scores = vec![0.0; data.len()];
    for c in 1..=data.num_classes {
        let ids = data.class_indices(c);
        if ids.is_empty() {
            continue;
        }
        let mut grads: Vec<Vec<f64>> = ids
            .iter()
            .map(|&i| sample_gradient(&model, &dense[i], data.labels[i]))
            .collect();
        let p = grads[0].len();
        let mut mean = vec![0.0; p];
        for g in &grads {
            for (m, &x) in mean.iter_mut().zip(g) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= ids.len() as f64;
        }
        for g in &mut grads {
            for (x, &m) in g.iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        let v = top_right_singular_vector(&grads);
        for (&i, g) in ids.iter().zip(&grads) {
            let proj: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
            scores[i] = proj * proj;
        }
    }
    Ok(scores)
}

/// SVD defense: beta rounds of (retrain victim, score, remove the
/// ceil(epsilon*T/beta) highest-scoring samples across all classes).
/// T is the original training-set size.
pub fn svd_defend(data: &Dataset, kind: VictimKind, cfg: &SvdConfig, seed: u64) -> Result<SvdOutcome> {
    if !(0.0..1.0).contains(&cfg.epsilon) {
        return Err(Error::input("epsilon must be in [0, 1)"));
    }
    if cfg.beta < 1 {
        return Err(Error::input("beta must be >= 1"));
    }
    if kind != VictimKind::Logistic && kind != VictimKind::Svm {
        return Err(Error::input("svd defense supports linear victims only"));
    }
    let t = data.len();
    let per_step = ((cfg.epsilon * t as f64) / cfg.beta as f64).ceil() as usize;
    let mut current = data.clone();
    // Original indices of the rows still present in `current`.
    let mut alive: Vec<usize> = (0..t).collect();
    let mut removed_ids = Vec::new();
    if per_step == 0 {
        return Ok(SvdOutcome {
            dataset: current,
            removed_ids,
        });
    }
    for step in 0..cfg.beta {
        let scores = step_scores(&current, kind, seed.wrapping_add(step as u64))?;
        let mut order: Vec<usize> = (0..current.len()).collect();
        // Highest score first; index ties for determinism.
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        let cut: Vec<usize> = order.into_iter().take(per_step.min(current.len())).collect();
        for &i in &cut {
            removed_ids.push(alive[i]);
        }
        let keep: Vec<bool> = (0..current.len()).map(|i| !cut.contains(&i)).collect();
        alive = alive
            .iter()
            .zip(&keep)
            .filter(|&(_, &k)| k)
            .map(|(&a, _)| a)
            .collect();
        current = current.restrict(&keep);
    }
    removed_ids.sort_unstable();
    Ok(SvdOutcome {
        dataset: current,
        removed_ids,
    })
}
