//! Per-class mixture models: diagonal-covariance Gaussian and multinomial
//! component families, closed-form MLE, EM fitting, and BIC-based model
//! order selection with an adaptive upper bound.
//!
//! Conventions used throughout (they matter for reproducibility):
//! - natural log everywhere, per-parameter penalty k = 0.5 ln(n);
//! - the multinomial coefficient is dropped from log densities (constant
//!   per sample, cancels in every comparison made here);
//! - multinomial MLE uses additive smoothing of 1 pseudo-count per
//!   vocabulary entry; Gaussian variances are floored at 1e-6.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureVector};
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const SMOOTHING: f64 = 1.0;
pub const EM_TOL: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 200;
pub const EM_RESTARTS: usize = 3;
pub const M_MAX_INITIAL: usize = 25;

/// Parameters of one mixture component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ComponentParams {
    GaussianDiag { mean: Vec<f64>, var: Vec<f64> },
    Multinomial { log_prob: Vec<f64> },
}

impl ComponentParams {
    pub fn kind(&self) -> FeatureKind {
        match self {
            ComponentParams::GaussianDiag { .. } => FeatureKind::Continuous,
            ComponentParams::Multinomial { .. } => FeatureKind::Count,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ComponentParams::GaussianDiag { mean, .. } => mean.len(),
            ComponentParams::Multinomial { log_prob } => log_prob.len(),
        }
    }

    /// Number of free parameters |Lambda|: 2d for a diagonal Gaussian,
    /// d-1 for a multinomial PMF.
    pub fn free_param_count(&self) -> usize {
        match self {
            ComponentParams::GaussianDiag { mean, .. } => 2 * mean.len(),
            ComponentParams::Multinomial { log_prob } => log_prob.len() - 1,
        }
    }

    /// log P[x; Lambda]. Finite for every valid input thanks to the
    /// variance floor / count smoothing applied at fit time.
    pub fn log_density(&self, x: &FeatureVector) -> Result<f64> {
        match self {
            ComponentParams::GaussianDiag { mean, var } => {
                let v = x.dense()?;
                if v.len() != mean.len() {
                    return Err(Error::input(format!(
                        "dimension mismatch: sample has {}, component has {}",
                        v.len(),
                        mean.len()
                    )));
                }
                let mut ll = 0.0;
                for l in 0..v.len() {
                    let diff = v[l] - mean[l];
                    ll += -0.5 * (2.0 * std::f64::consts::PI * var[l]).ln()
                        - diff * diff / (2.0 * var[l]);
                }
                Ok(ll)
            }
            ComponentParams::Multinomial { log_prob } => {
                let entries = x.sparse()?;
                let mut ll = 0.0;
                for &(idx, cnt) in entries {
                    let lp = log_prob.get(idx).ok_or_else(|| {
                        Error::input(format!(
                            "dimension mismatch: index {idx} beyond vocabulary {}",
                            log_prob.len()
                        ))
                    })?;
                    ll += cnt as f64 * lp;
                }
                Ok(ll)
            }
        }
    }
}

/// One class's generative model: ordered components plus mixing weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMixture {
    pub class_id: usize,
    pub components: Vec<ComponentParams>,
    pub weights: Vec<f64>,
}

impl ClassMixture {
    pub fn order(&self) -> usize {
        self.components.len()
    }
}

/// The per-class mixtures for every class `1..=W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub mixtures: BTreeMap<usize, ClassMixture>,
}

impl ModelSet {
    /// Fits one mixture per class with BIC-selected order.
    pub fn fit(data: &Dataset, m_max_initial: usize, seed: u64) -> Result<ModelSet> {
        let mut mixtures = BTreeMap::new();
        for c in 1..=data.num_classes {
            let samples = data.class_samples(c);
            let mix = select_order(
                &samples,
                data.feature_kind,
                data.dim,
                c,
                m_max_initial,
                seed.wrapping_add(c as u64),
            )?;
            mixtures.insert(c, mix);
        }
        Ok(ModelSet { mixtures })
    }
}

/// Closed-form maximum-likelihood fit of a single component.
///
/// Gaussian: per-coordinate sample mean and biased (1/n) variance,
/// floored. Multinomial: Laplace-smoothed normalized pooled counts.
pub fn mle_fit(kind: FeatureKind, samples: &[&FeatureVector], dim: usize) -> Result<ComponentParams> {
    if samples.is_empty() {
        return Err(Error::input("mle_fit requires at least one sample"));
    }
    let weights = vec![1.0; samples.len()];
    Ok(mle_fit_weighted(kind, samples, &weights, dim))
}

/// Weighted MLE, shared by plain MLE (unit weights) and the EM M-step.
/// Total weight must be positive.
fn mle_fit_weighted(
    kind: FeatureKind,
    samples: &[&FeatureVector],
    weights: &[f64],
    dim: usize,
) -> ComponentParams {
    let total_w: f64 = weights.iter().sum();
    match kind {
        FeatureKind::Continuous => {
            let mut mean = vec![0.0; dim];
            for (s, &w) in samples.iter().zip(weights) {
                for (l, &x) in s.dense().unwrap().iter().enumerate() {
                    mean[l] += w * x;
                }
            }
            for m in &mut mean {
                *m /= total_w;
            }
            let mut var = vec![0.0; dim];
            for (s, &w) in samples.iter().zip(weights) {
                for (l, &x) in s.dense().unwrap().iter().enumerate() {
                    let diff = x - mean[l];
                    var[l] += w * diff * diff;
                }
            }
            for v in &mut var {
                *v = (*v / total_w).max(VARIANCE_FLOOR);
            }
            ComponentParams::GaussianDiag { mean, var }
        }
        FeatureKind::Count => {
            let mut counts = vec![SMOOTHING; dim];
            let mut total = SMOOTHING * dim as f64;
            for (s, &w) in samples.iter().zip(weights) {
                for &(idx, cnt) in s.sparse().unwrap() {
                    counts[idx] += w * cnt as f64;
                    total += w * cnt as f64;
                }
            }
            let log_prob = counts.iter().map(|&c| (c / total).ln()).collect();
            ComponentParams::Multinomial { log_prob }
        }
    }
}

/// One EM run's outcome, including the recorded incomplete-data
/// log-likelihood trace (non-decreasing by construction: an iteration
/// that would lower the objective is rolled back and fitting stops).
#[derive(Clone, Debug)]
pub struct EmRun {
    pub mixture: ClassMixture,
    pub log_likelihood: f64,
    pub ll_trace: Vec<f64>,
}

/// EM fit of an `m`-component mixture over one class's samples.
/// Deterministic for a fixed seed: k-means++-style seeding, 3 restarts,
/// best final likelihood kept.
pub fn em_fit(
    samples: &[&FeatureVector],
    kind: FeatureKind,
    dim: usize,
    class_id: usize,
    m: usize,
    seed: u64,
) -> Result<ClassMixture> {
    Ok(em_fit_detailed(samples, kind, dim, class_id, m, seed)?.mixture)
}

pub fn em_fit_detailed(
    samples: &[&FeatureVector],
    kind: FeatureKind,
    dim: usize,
    class_id: usize,
    m: usize,
    seed: u64,
) -> Result<EmRun> {
    if m < 1 {
        return Err(Error::input("model order must be >= 1"));
    }
    if samples.is_empty() {
        return Err(Error::input("em_fit requires a nonempty class"));
    }
    if m > samples.len() {
        return Err(Error::input(format!(
            "model order {m} exceeds class size {}",
            samples.len()
        )));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<EmRun> = None;
    for _ in 0..EM_RESTARTS {
        let restart_seed: u64 = master.gen();
        let run = em_single_run(samples, kind, dim, class_id, m, restart_seed);
        let better = match &best {
            None => true,
            Some(b) => run.log_likelihood > b.log_likelihood,
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn em_single_run(
    samples: &[&FeatureVector],
    kind: FeatureKind,
    dim: usize,
    class_id: usize,
    m: usize,
    seed: u64,
) -> EmRun {
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense: Vec<Vec<f64>> = samples.iter().map(|s| embed(s, kind, dim)).collect();

    let seeds = kmeanspp_seeds(&dense, m, &mut rng);
    let mut components: Vec<ComponentParams> = match kind {
        FeatureKind::Continuous => {
            let global_var = global_variance(&dense);
            seeds
                .iter()
                .map(|&i| ComponentParams::GaussianDiag {
                    mean: dense[i].clone(),
                    var: global_var.clone(),
                })
                .collect()
        }
        FeatureKind::Count => seeds
            .iter()
            .map(|&i| mle_fit_weighted(kind, &[samples[i]], &[1.0], dim))
            .collect(),
    };
    let mut weights = vec![1.0 / m as f64; m];

    let mut ll_trace: Vec<f64> = Vec::new();
    let mut resp = vec![vec![0.0; m]; n];
    let mut prev_params: Option<(Vec<ComponentParams>, Vec<f64>)> = None;
    for _iter in 0..EM_MAX_ITERS {
        // E-step
        let mut ll = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let mut logs = vec![f64::NEG_INFINITY; m];
            for j in 0..m {
                if weights[j] > 0.0 {
                    logs[j] = weights[j].ln() + components[j].log_density(s).unwrap();
                }
            }
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..m {
                resp[i][j] = (logs[j] - lse).exp();
            }
        }

        if let Some(&prev) = ll_trace.last() {
            if ll < prev {
                // Smoothing/flooring in the M-step can in principle nudge the
                // raw objective down; roll back to the previous model and stop.
                let (pc, pw) = prev_params.unwrap();
                components = pc;
                weights = pw;
                break;
            }
            ll_trace.push(ll);
            if (ll - prev).abs() < EM_TOL * prev.abs().max(1.0) {
                break;
            }
        } else {
            ll_trace.push(ll);
        }
        prev_params = Some((components.clone(), weights.clone()));

        // M-step
        let mut next_components = Vec::with_capacity(m);
        let mut next_weights = Vec::with_capacity(m);
        let mut changed = false;
        for j in 0..m {
            let wj: Vec<f64> = (0..n).map(|i| resp[i][j]).collect();
            let nj: f64 = wj.iter().sum();
            if nj > 1e-12 {
                next_components.push(mle_fit_weighted(kind, samples, &wj, dim));
                changed = true;
            } else {
                // Collapsed component: keep its parameters, starve its weight.
                next_components.push(components[j].clone());
            }
            next_weights.push(nj / n as f64);
        }
        if !changed {
            break;
        }
        components = next_components;
        weights = next_weights;
    }

    let final_ll = *ll_trace.last().unwrap();
    EmRun {
        mixture: ClassMixture {
            class_id,
            components,
            weights,
        },
        log_likelihood: final_ll,
        ll_trace,
    }
}

/// Incomplete-data BIC of one class mixture on its class samples:
/// |theta| * 0.5 ln(n) - sum_i log sum_j alpha_j P[x_i; Lambda_j],
/// with |theta| = sum_j |Lambda_j| + (M - 1).
pub fn incomplete_bic(mix: &ClassMixture, samples: &[&FeatureVector]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("incomplete_bic requires data"));
    }
    let m = mix.order();
    let free: usize = mix
        .components
        .iter()
        .map(ComponentParams::free_param_count)
        .sum::<usize>()
        + (m - 1);
    let k = 0.5 * (samples.len() as f64).ln();
    let mut ll = 0.0;
    for s in samples {
        let logs: Vec<f64> = (0..m)
            .map(|j| {
                if mix.weights[j] > 0.0 {
                    mix.weights[j].ln() + mix.components[j].log_density(s).unwrap()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        ll += log_sum_exp(&logs);
    }
    Ok(free as f64 * k - ll)
}

/// BIC-based model-order selection for one class. Fits M = 1..M_max,
/// returns the argmin of `incomplete_bic` (ties toward smaller M); if the
/// argmin sits at M_max the bound is doubled (capped by class size) and
/// the sweep continues.
pub fn select_order(
    samples: &[&FeatureVector],
    kind: FeatureKind,
    dim: usize,
    class_id: usize,
    m_max_initial: usize,
    seed: u64,
) -> Result<ClassMixture> {
    Ok(select_order_detailed(samples, kind, dim, class_id, m_max_initial, seed)?.0)
}

/// Also returns the (M, BIC) sweep, for inspection and testing.
pub fn select_order_detailed(
    samples: &[&FeatureVector],
    kind: FeatureKind,
    dim: usize,
    class_id: usize,
    m_max_initial: usize,
    seed: u64,
) -> Result<(ClassMixture, Vec<(usize, f64)>)> {
    if samples.is_empty() {
        return Err(Error::input("select_order requires a nonempty class"));
    }
    let n = samples.len();
    let mut m_max = m_max_initial.clamp(1, n);
    let mut sweep: Vec<(usize, f64)> = Vec::new();
    let mut fits: BTreeMap<usize, ClassMixture> = BTreeMap::new();
    loop {
        for m in (sweep.len() + 1)..=m_max {
            let mix = em_fit(samples, kind, dim, class_id, m, seed.wrapping_add(m as u64))?;
            let bic = incomplete_bic(&mix, samples)?;
            sweep.push((m, bic));
            fits.insert(m, mix);
        }
        let (best_m, _) = sweep
            .iter()
            .fold((0usize, f64::INFINITY), |(bm, bb), &(m, b)| {
                if b < bb {
                    (m, b)
                } else {
                    (bm, bb)
                }
            });
        if best_m == m_max && m_max < n {
            m_max = (2 * m_max).min(n);
            continue;
        }
        return Ok((fits.remove(&best_m).unwrap(), sweep));
    }
}

/// Hard per-class partitions: sample i labeled c goes to
/// argmax_j log P[x_i; Lambda_j^c], ties toward the smallest j.
/// Returned as `partitions[class] = vec of member-index lists`, one list
/// per component, indexed from the class map in ascending class order.
pub fn hard_assign(model: &ModelSet, data: &Dataset) -> Result<BTreeMap<usize, Vec<Vec<usize>>>> {
    let mut partitions: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for (&c, mix) in &model.mixtures {
        partitions.insert(c, vec![Vec::new(); mix.order()]);
    }
    for i in 0..data.len() {
        let c = data.labels[i];
        let mix = model
            .mixtures
            .get(&c)
            .ok_or_else(|| Error::input(format!("model has no mixture for class {c}")))?;
        let mut best_j = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for (j, comp) in mix.components.iter().enumerate() {
            let ll = comp.log_density(&data.samples[i])?;
            if ll > best_ll {
                best_ll = ll;
                best_j = j;
            }
        }
        partitions.get_mut(&c).unwrap()[best_j].push(i);
    }
    Ok(partitions)
}

fn embed(s: &FeatureVector, kind: FeatureKind, dim: usize) -> Vec<f64> {
    match kind {
        FeatureKind::Continuous => s.dense().unwrap().to_vec(),
        FeatureKind::Count => {
            // Normalized count profile, used only for seeding distances.
            let total = s.total_count().max(1) as f64;
            let mut v = vec![0.0; dim];
            for &(idx, cnt) in s.sparse().unwrap() {
                v[idx] = cnt as f64 / total;
            }
            v
        }
    }
}

fn global_variance(dense: &[Vec<f64>]) -> Vec<f64> {
    let n = dense.len() as f64;
    let d = dense[0].len();
    let mut mean = vec![0.0; d];
    for x in dense {
        for l in 0..d {
            mean[l] += x[l];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for x in dense {
        for l in 0..d {
            let diff = x[l] - mean[l];
            var[l] += diff * diff;
        }
    }
    for v in &mut var {
        *v = (*v / n).max(VARIANCE_FLOOR);
    }
    var
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++-style seed selection over the embedded samples.
fn kmeanspp_seeds(dense: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = dense.len();
    let mut seeds = Vec::with_capacity(m);
    seeds.push(rng.gen_range(0..n));
    let mut min_d: Vec<f64> = dense.iter().map(|x| sq_dist(x, &dense[seeds[0]])).collect();
    while seeds.len() < m {
        let total: f64 = min_d.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a seed; pick the first
            // index not yet chosen to keep the seed set distinct.
            (0..n).find(|i| !seeds.contains(i)).unwrap_or(0)
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                r -= d;
                if r <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        seeds.push(next);
        for i in 0..n {
            let d = sq_dist(&dense[i], &dense[next]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    seeds
}

pub fn log_sum_exp(logs: &[f64]) -> f64 {
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + logs.iter().map(|&l| (l - mx).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dense(v: &[f64]) -> FeatureVector {
        FeatureVector::Dense(v.to_vec())
    }

    #[test]
    fn standard_normal_log_density_at_mode() {
        let p = ComponentParams::GaussianDiag {
            mean: vec![0.0],
            var: vec![1.0],
        };
        let got = p.log_density(&dense(&[0.0])).unwrap();
        let want = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((want + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn symmetric_multinomial_log_density() {
        let p = ComponentParams::Multinomial {
            log_prob: vec![0.5f64.ln(), 0.5f64.ln()],
        };
        let x = FeatureVector::Sparse(vec![(0, 1), (1, 1)]);
        // Multinomial coefficient dropped by convention: 2 ln(0.5).
        let got = p.log_density(&x).unwrap();
        assert!((got - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((got + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn gaussian_log_density_matches_scalar_pdf_product() {
        // Independent per-coordinate oracle: product of scalar normal PDFs.
        let p = ComponentParams::GaussianDiag {
            mean: vec![1.0, 2.0],
            var: vec![4.0, 9.0],
        };
        let x = [3.0, 5.0];
        let scalar_pdf = |x: f64, m: f64, v: f64| {
            (-((x - m) * (x - m)) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
        };
        let oracle = (scalar_pdf(x[0], 1.0, 4.0) * scalar_pdf(x[1], 2.0, 9.0)).ln();
        let got = p.log_density(&dense(&x)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn log_density_dimension_mismatch_errors() {
        let p = ComponentParams::GaussianDiag {
            mean: vec![0.0, 0.0],
            var: vec![1.0, 1.0],
        };
        assert!(p.log_density(&dense(&[0.0])).is_err());
        // Kind mismatch.
        assert!(p
            .log_density(&FeatureVector::Sparse(vec![(0, 1)]))
            .is_err());
    }

    #[test]
    fn mle_two_point_gaussian() {
        let a = dense(&[0.0]);
        let b = dense(&[2.0]);
        let p = mle_fit(FeatureKind::Continuous, &[&a, &b], 1).unwrap();
        match p {
            ComponentParams::GaussianDiag { mean, var } => {
                assert!((mean[0] - 1.0).abs() < 1e-12);
                assert!((var[0] - 1.0).abs() < 1e-12);
            }
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn mle_multinomial_laplace() {
        let a = FeatureVector::Sparse(vec![(0, 2), (1, 1)]);
        let b = FeatureVector::Sparse(vec![(2, 1)]);
        let p = mle_fit(FeatureKind::Count, &[&a, &b], 3).unwrap();
        match p {
            ComponentParams::Multinomial { log_prob } => {
                let probs: Vec<f64> = log_prob.iter().map(|l| l.exp()).collect();
                assert!((probs[0] - 3.0 / 7.0).abs() < 1e-12);
                assert!((probs[1] - 2.0 / 7.0).abs() < 1e-12);
                assert!((probs[2] - 2.0 / 7.0).abs() < 1e-12);
                let total: f64 = probs.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn mle_empty_set_errors() {
        assert!(mle_fit(FeatureKind::Continuous, &[], 1).is_err());
    }

    #[test]
    fn mle_beats_random_perturbations() {
        // Random-perturbation optimality oracle on both families.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<FeatureVector> = (0..50)
            .map(|_| dense(&[rng.gen::<f64>() * 4.0, rng.gen::<f64>() - 3.0]))
            .collect();
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let fit = mle_fit(FeatureKind::Continuous, &refs, 2).unwrap();
        let obj = |p: &ComponentParams| -> f64 {
            refs.iter().map(|s| p.log_density(s).unwrap()).sum()
        };
        let base = obj(&fit);
        let (mean, var) = match &fit {
            ComponentParams::GaussianDiag { mean, var } => (mean.clone(), var.clone()),
            _ => unreachable!(),
        };
        for _ in 0..100 {
            let pm: Vec<f64> = mean
                .iter()
                .map(|&m| m * (1.0 + 0.1 * (rng.gen::<f64>() - 0.5)) + 0.05 * (rng.gen::<f64>() - 0.5))
                .collect();
            let pv: Vec<f64> = var
                .iter()
                .map(|&v| (v * (1.0 + 0.1 * (rng.gen::<f64>() - 0.5))).max(VARIANCE_FLOOR))
                .collect();
            let perturbed = ComponentParams::GaussianDiag { mean: pm, var: pv };
            assert!(obj(&perturbed) <= base + 1e-9);
        }
    }

    #[test]
    fn mle_multinomial_beats_dirichlet_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<FeatureVector> = (0..15)
            .map(|_| {
                FeatureVector::Sparse(vec![
                    (0, rng.gen_range(1..5)),
                    (1, rng.gen_range(1..4)),
                    (3, rng.gen_range(1..3)),
                ])
            })
            .collect();
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let fit = mle_fit(FeatureKind::Count, &refs, 4).unwrap();
        // The smoothed MLE maximizes the penalized objective: data
        // log-likelihood plus the smoothing pseudo-count likelihood.
        let pen_obj = |p: &ComponentParams| -> f64 {
            let data: f64 = refs.iter().map(|s| p.log_density(s).unwrap()).sum();
            let prior: f64 = match p {
                ComponentParams::Multinomial { log_prob } => {
                    log_prob.iter().map(|&l| SMOOTHING * l).sum()
                }
                _ => unreachable!(),
            };
            data + prior
        };
        let base = pen_obj(&fit);
        let probs: Vec<f64> = match &fit {
            ComponentParams::Multinomial { log_prob } => log_prob.iter().map(|l| l.exp()).collect(),
            _ => unreachable!(),
        };
        for _ in 0..100 {
            let jitter: Vec<f64> = probs
                .iter()
                .map(|&p| p * (0.5 + rng.gen::<f64>()))
                .collect();
            let total: f64 = jitter.iter().sum();
            let perturbed = ComponentParams::Multinomial {
                log_prob: jitter.iter().map(|&p| (p / total).ln()).collect(),
            };
            assert!(pen_obj(&perturbed) <= base + 1e-9);
        }
    }

    #[test]
    fn em_m1_collapses_to_mle() {
        let samples: Vec<FeatureVector> =
            vec![dense(&[0.0]), dense(&[1.0]), dense(&[5.0])];
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let mix = em_fit(&refs, FeatureKind::Continuous, 1, 1, 1, 42).unwrap();
        assert_eq!(mix.weights, vec![1.0]);
        let mle = mle_fit(FeatureKind::Continuous, &refs, 1).unwrap();
        match (&mix.components[0], &mle) {
            (
                ComponentParams::GaussianDiag { mean: m1, var: v1 },
                ComponentParams::GaussianDiag { mean: m2, var: v2 },
            ) => {
                assert!((m1[0] - m2[0]).abs() < 1e-9);
                assert!((v1[0] - v2[0]).abs() < 1e-9);
            }
            _ => panic!(),
        }
    }

    fn two_cluster_1d(seed: u64) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..100 {
            out.push(dense(&[-10.0 + gauss(&mut rng)]));
        }
        for _ in 0..100 {
            out.push(dense(&[10.0 + gauss(&mut rng)]));
        }
        out
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-12);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn em_recovers_two_separated_clusters() {
        let samples = two_cluster_1d(3);
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let mix = em_fit(&refs, FeatureKind::Continuous, 1, 1, 2, 9).unwrap();
        let mut means: Vec<f64> = mix
            .components
            .iter()
            .map(|c| match c {
                ComponentParams::GaussianDiag { mean, .. } => mean[0],
                _ => unreachable!(),
            })
            .collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] + 10.0).abs() < 0.5, "means = {means:?}");
        assert!((means[1] - 10.0).abs() < 0.5, "means = {means:?}");
        for &w in &mix.weights {
            assert!((w - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn em_is_deterministic_for_fixed_seed() {
        let samples = two_cluster_1d(5);
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let a = em_fit(&refs, FeatureKind::Continuous, 1, 1, 2, 1234).unwrap();
        let b = em_fit(&refs, FeatureKind::Continuous, 1, 1, 2, 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn em_ll_trace_nondecreasing() {
        for seed in 0..5 {
            let samples = two_cluster_1d(seed);
            let refs: Vec<&FeatureVector> = samples.iter().collect();
            let run = em_fit_detailed(&refs, FeatureKind::Continuous, 1, 1, 3, seed).unwrap();
            for w in run.ll_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "trace dipped: {:?}", run.ll_trace);
            }
        }
    }

    #[test]
    fn em_rejects_m_above_class_size() {
        let samples = vec![dense(&[0.0]), dense(&[1.0])];
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        assert!(em_fit(&refs, FeatureKind::Continuous, 1, 1, 3, 0).is_err());
    }

    #[test]
    fn mixture_weights_normalized_after_fit() {
        let samples = two_cluster_1d(8);
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        for m in 1..=3 {
            let mix = em_fit(&refs, FeatureKind::Continuous, 1, 1, m, 77).unwrap();
            let total: f64 = mix.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(mix.weights.iter().all(|&w| w >= 0.0));
            for c in &mix.components {
                match c {
                    ComponentParams::GaussianDiag { var, .. } => {
                        assert!(var.iter().all(|&v| v >= VARIANCE_FLOOR));
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn multinomial_fit_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<FeatureVector> = (0..40)
            .map(|i| {
                let block = if i < 20 { 0 } else { 3 };
                FeatureVector::Sparse(vec![
                    (block, rng.gen_range(3..8)),
                    (block + 1, rng.gen_range(1..4)),
                ])
            })
            .collect();
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let mix = em_fit(&refs, FeatureKind::Count, 6, 1, 2, 5).unwrap();
        for c in &mix.components {
            match c {
                ComponentParams::Multinomial { log_prob } => {
                    let total: f64 = log_prob.iter().map(|l| l.exp()).sum();
                    assert!((total - 1.0).abs() < 1e-9);
                    assert!(log_prob.iter().all(|l| l.is_finite()));
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn incomplete_bic_formula_direct() {
        // M=1: BIC = |Lambda| * 0.5 ln n - L, no weight parameters.
        let samples: Vec<FeatureVector> = (0..8).map(|i| dense(&[i as f64])).collect();
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let mix = em_fit(&refs, FeatureKind::Continuous, 1, 1, 1, 0).unwrap();
        let ll: f64 = refs
            .iter()
            .map(|s| mix.components[0].log_density(s).unwrap())
            .sum();
        let want = 2.0 * 0.5 * (8.0f64).ln() - ll;
        let got = incomplete_bic(&mix, &refs).unwrap();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn bic_prefers_one_component_on_single_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<FeatureVector> = (0..120).map(|_| dense(&[gauss(&mut rng)])).collect();
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let m1 = em_fit(&refs, FeatureKind::Continuous, 1, 1, 1, 3).unwrap();
        let m2 = em_fit(&refs, FeatureKind::Continuous, 1, 1, 2, 3).unwrap();
        assert!(
            incomplete_bic(&m1, &refs).unwrap() < incomplete_bic(&m2, &refs).unwrap()
        );
    }

    #[test]
    fn select_order_single_cluster_picks_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples: Vec<FeatureVector> = (0..100).map(|_| dense(&[gauss(&mut rng)])).collect();
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let (mix, sweep) =
            select_order_detailed(&refs, FeatureKind::Continuous, 1, 1, 5, 17).unwrap();
        assert_eq!(mix.order(), 1, "sweep: {sweep:?}");
        // Re-sweep check: returned order is the global argmin.
        let best = sweep
            .iter()
            .fold((0usize, f64::INFINITY), |acc, &(m, b)| {
                if b < acc.1 {
                    (m, b)
                } else {
                    acc
                }
            });
        assert_eq!(best.0, mix.order());
    }

    #[test]
    fn select_order_two_clusters_picks_two() {
        let samples = two_cluster_1d(41);
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let mix = select_order(&refs, FeatureKind::Continuous, 1, 1, 5, 23).unwrap();
        assert_eq!(mix.order(), 2);
    }

    #[test]
    fn select_order_doubles_m_max_when_argmin_at_bound() {
        // Two clusters but the initial bound is 1: argmin lands on the
        // bound, so the bound doubles and order 2 is found.
        let samples = two_cluster_1d(51);
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let (mix, sweep) =
            select_order_detailed(&refs, FeatureKind::Continuous, 1, 1, 1, 23).unwrap();
        assert_eq!(mix.order(), 2);
        assert!(sweep.len() >= 2);
    }

    #[test]
    fn bic_order_curve_is_u_shaped_on_multimodal_counts() {
        // Qualitative analog of a text-corpus BIC-vs-order curve:
        // decreases to the true order, then increases.
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut samples = Vec::new();
        for topic in 0..3usize {
            for _ in 0..60 {
                let base = topic * 4;
                samples.push(FeatureVector::Sparse(vec![
                    (base, rng.gen_range(5..12)),
                    (base + 1, rng.gen_range(2..6)),
                    (11, 1),
                ]));
            }
        }
        let refs: Vec<&FeatureVector> = samples.iter().collect();
        let (_, sweep) =
            select_order_detailed(&refs, FeatureKind::Count, 12, 1, 6, 19).unwrap();
        let bics: Vec<f64> = sweep.iter().map(|&(_, b)| b).collect();
        let min_idx = bics
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &b)| {
                if b < acc.1 {
                    (i, b)
                } else {
                    acc
                }
            })
            .0;
        assert!(min_idx > 0, "BIC should drop from order 1: {bics:?}");
        assert!(
            min_idx < bics.len() - 1,
            "BIC should rise past the best order: {bics:?}"
        );
    }

    #[test]
    fn hard_assign_single_component_takes_all() {
        let data = Dataset::new(
            vec![dense(&[0.0]), dense(&[1.0]), dense(&[5.0])],
            vec![1, 1, 1],
            None,
            FeatureKind::Continuous,
            1,
            1,
        )
        .unwrap();
        let refs: Vec<&FeatureVector> = data.samples.iter().collect();
        let comp = mle_fit(FeatureKind::Continuous, &refs, 1).unwrap();
        let mut mixtures = BTreeMap::new();
        mixtures.insert(
            1,
            ClassMixture {
                class_id: 1,
                components: vec![comp],
                weights: vec![1.0],
            },
        );
        let model = ModelSet { mixtures };
        let parts = hard_assign(&model, &data).unwrap();
        assert_eq!(parts[&1][0], vec![0, 1, 2]);
    }

    #[test]
    fn hard_assign_tie_goes_to_first_component() {
        let comp = ComponentParams::GaussianDiag {
            mean: vec![0.0],
            var: vec![1.0],
        };
        let mix = ClassMixture {
            class_id: 1,
            components: vec![comp.clone(), comp],
            weights: vec![0.5, 0.5],
        };
        let mut mixtures = BTreeMap::new();
        mixtures.insert(1, mix);
        let model = ModelSet { mixtures };
        let data = Dataset::new(
            vec![dense(&[0.7])],
            vec![1],
            None,
            FeatureKind::Continuous,
            1,
            1,
        )
        .unwrap();
        let parts = hard_assign(&model, &data).unwrap();
        assert_eq!(parts[&1][0], vec![0]);
        assert!(parts[&1][1].is_empty());
    }

    #[test]
    fn hard_assign_matches_bruteforce_argmax() {
        let samples = two_cluster_1d(71);
        let labels = vec![1; samples.len()];
        let data = Dataset::new(
            samples,
            labels,
            None,
            FeatureKind::Continuous,
            1,
            1,
        )
        .unwrap();
        let model = ModelSet::fit(&data, 3, 7).unwrap();
        let parts = hard_assign(&model, &data).unwrap();
        let mix = &model.mixtures[&1];
        for i in 0..data.len() {
            let lls: Vec<f64> = mix
                .components
                .iter()
                .map(|c| c.log_density(&data.samples[i]).unwrap())
                .collect();
            let mut best = 0;
            for (j, &ll) in lls.iter().enumerate() {
                if ll > lls[best] {
                    best = j;
                }
            }
            assert!(parts[&1][best].contains(&i));
        }
    }
}
