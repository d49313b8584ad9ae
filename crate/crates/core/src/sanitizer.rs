//! Greedy minimization of the poisoning-aware complete-data BIC by trial
//! removal/revision of mixture components, with a final poisoning
//! hypothesis test and extraction of the sanitized training set.
//!
//! Bookkeeping conventions:
//! - k = 0.5 ln T with T the full training-set size;
//! - the complete-data objective uses uniform component priors (mixing
//!   weights only matter during fitting);
//! - every component ever fitted carries one structural bit as a
//!   constant, so it contributes zero to every delta;
//! - removal is permanent, a class's last live component is protected,
//!   and a revision with no surviving samples is infeasible.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mixtures::{hard_assign, mle_fit, ComponentParams, ModelSet};

/// Identity of a mixture component: (class id, index within the class's
/// original ordered component list).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompKey {
    pub class: usize,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialCase {
    Keep,
    Revise,
    Remove,
}

impl TrialCase {
    fn rank(self) -> u8 {
        match self {
            TrialCase::Keep => 0,
            TrialCase::Revise => 1,
            TrialCase::Remove => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrialCase::Keep => "keep",
            TrialCase::Revise => "revise",
            TrialCase::Remove => "remove",
        }
    }

    /// Case number m in the three-way configuration (1=keep, 2=remove,
    /// 3=revise).
    pub fn case_number(self) -> u8 {
        match self {
            TrialCase::Keep => 1,
            TrialCase::Remove => 2,
            TrialCase::Revise => 3,
        }
    }
}

/// Outcome of one pure trial evaluation: the BIC delta split into its
/// complexity and likelihood parts, plus the proposals a commit applies.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub target: CompKey,
    pub case: TrialCase,
    pub delta_omega: f64,
    pub delta_l: f64,
    /// sample id -> new owning component (movers only for revise, all
    /// members for remove).
    pub reassign: Vec<(usize, CompKey)>,
    /// Refitted parameters, including the target itself for revise.
    pub refits: Vec<(CompKey, ComponentParams)>,
}

impl TrialResult {
    pub fn delta_bic(&self) -> f64 {
        self.delta_omega + self.delta_l
    }

    fn keep(target: CompKey) -> TrialResult {
        TrialResult {
            target,
            case: TrialCase::Keep,
            delta_omega: 0.0,
            delta_l: 0.0,
            reassign: Vec::new(),
            refits: Vec::new(),
        }
    }
}

/// One committed greedy step, as surfaced in traces and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub bic: f64,
    pub num_detected: usize,
    pub case: TrialCase,
    pub class: usize,
    pub component: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Clean,
    Poisoned,
}

/// Per-class component accounting for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassComponentStats {
    pub class: usize,
    pub components: usize,
    pub revised: usize,
    pub removed: usize,
}

/// Everything the defense emits besides the sanitized dataset itself.
#[derive(Clone, Debug)]
pub struct SanitizeOutcome {
    pub removed_sample_ids: Vec<usize>,
    pub verdict: Verdict,
    pub per_class: Vec<ClassComponentStats>,
    pub trace: Vec<StepRecord>,
    pub initial_bic: f64,
    pub final_bic: f64,
}

struct LiveComponent {
    params: ComponentParams,
    /// Cached log densities over every training sample.
    logdens: Vec<f64>,
    members: Vec<usize>,
    revised: bool,
}

/// Mutable sanitization state over a fixed training set. Drive it with
/// [`Sanitizer::step`] or run it to convergence via [`sanitize`].
pub struct Sanitizer<'a> {
    data: &'a Dataset,
    comps: BTreeMap<CompKey, LiveComponent>,
    removed: Vec<CompKey>,
    /// Owning component per sample; t_i is `owner.class`.
    owner: Vec<CompKey>,
    k: f64,
    n_original_components: usize,
    bic: f64,
    trace: Vec<StepRecord>,
}

impl<'a> Sanitizer<'a> {
    /// Builds the initial state: t_i = y_i, flags clear, hard per-class
    /// assignment, full density cache, and the starting complete-data BIC.
    pub fn new(data: &'a Dataset, model: &ModelSet) -> Result<Sanitizer<'a>> {
        for c in 1..=data.num_classes {
            if !model.mixtures.contains_key(&c) {
                return Err(Error::input(format!("model missing class {c}")));
            }
        }
        let partitions = hard_assign(model, data)?;
        let mut comps = BTreeMap::new();
        let mut owner = vec![CompKey { class: 0, index: 0 }; data.len()];
        let mut n_original_components = 0;
        for (&c, mix) in &model.mixtures {
            for (j, params) in mix.components.iter().enumerate() {
                let key = CompKey { class: c, index: j };
                let logdens: Vec<f64> = data
                    .samples
                    .iter()
                    .map(|s| params.log_density(s))
                    .collect::<Result<_>>()?;
                let members = partitions[&c][j].clone();
                for &i in &members {
                    owner[i] = key;
                }
                comps.insert(
                    key,
                    LiveComponent {
                        params: params.clone(),
                        logdens,
                        members,
                        revised: false,
                    },
                );
                n_original_components += 1;
            }
        }
        let k = 0.5 * (data.len() as f64).ln();
        let mut s = Sanitizer {
            data,
            comps,
            removed: Vec::new(),
            owner,
            k,
            n_original_components,
            bic: 0.0,
            trace: Vec::new(),
        };
        s.bic = s.complete_bic_recomputed();
        Ok(s)
    }

    pub fn bic(&self) -> f64 {
        self.bic
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn penalty_per_param(&self) -> f64 {
        self.k
    }

    /// Incrementally maintained complete-data BIC.
    pub fn complete_bic(&self) -> f64 {
        self.bic
    }

    /// From-scratch recomputation over the current configuration; the
    /// oracle counterpart of the incrementally maintained value.
    pub fn complete_bic_recomputed(&self) -> f64 {
        let mut omega = self.n_original_components as f64; // structural bits, constant
        let mut ll = 0.0;
        for comp in self.comps.values() {
            omega += self.k * comp.params.free_param_count() as f64;
            for &i in &comp.members {
                ll += comp.params.log_density(&self.data.samples[i]).unwrap();
            }
        }
        omega - ll
    }

    /// Current member ids of a live component (empty if not live).
    pub fn members_of(&self, key: CompKey) -> Vec<usize> {
        self.comps
            .get(&key)
            .map(|c| c.members.clone())
            .unwrap_or_default()
    }

    /// Sample ids currently explained by a class other than their label.
    pub fn detected_ids(&self) -> Vec<usize> {
        (0..self.data.len())
            .filter(|&i| self.owner[i].class != self.data.labels[i])
            .collect()
    }

    pub fn num_detected(&self) -> usize {
        (0..self.data.len())
            .filter(|&i| self.owner[i].class != self.data.labels[i])
            .count()
    }

    fn live_in_class(&self, class: usize) -> usize {
        self.comps.keys().filter(|k| k.class == class).count()
    }

    /// Best explaining component for sample `i` over the live set minus
    /// `excluded`; ties toward the smallest (class, index).
    fn best_other(&self, i: usize, excluded: CompKey) -> CompKey {
        let mut best: Option<(CompKey, f64)> = None;
        for (&key, comp) in &self.comps {
            if key == excluded {
                continue;
            }
            let ll = comp.logdens[i];
            match best {
                Some((_, b)) if ll <= b => {}
                _ => best = Some((key, ll)),
            }
        }
        best.expect("at least two live components").0
    }

    /// Case 1: no change.
    pub fn trial_keep(&self, target: CompKey) -> TrialResult {
        TrialResult::keep(target)
    }

    /// Case 2: remove the component and re-home every member to its best
    /// other component, refitting each receiver by MLE on its augmented
    /// membership. Infeasible when the class would lose its last live
    /// component. Pure: does not mutate state.
    pub fn trial_remove(&self, target: CompKey) -> Option<TrialResult> {
        let comp = self.comps.get(&target)?;
        if self.live_in_class(target.class) < 2 {
            return None;
        }
        let mut reassign: Vec<(usize, CompKey)> = Vec::with_capacity(comp.members.len());
        let mut incoming: BTreeMap<CompKey, Vec<usize>> = BTreeMap::new();
        for &i in &comp.members {
            let dest = self.best_other(i, target);
            reassign.push((i, dest));
            incoming.entry(dest).or_default().push(i);
        }
        let mut delta_l = 0.0;
        // Removed component's old contribution.
        for &i in &comp.members {
            delta_l += comp.logdens[i];
        }
        let mut refits = Vec::with_capacity(incoming.len());
        for (dest, extra) in incoming {
            let recv = &self.comps[&dest];
            let (new_params, old_ll, new_ll) = self.refit_receiver(recv, &extra);
            delta_l += old_ll - new_ll;
            refits.push((dest, new_params));
        }
        Some(TrialResult {
            target,
            case: TrialCase::Remove,
            delta_omega: -(comp.params.free_param_count() as f64) * self.k,
            delta_l,
            reassign,
            refits,
        })
    }

    /// Case 3: members best explained by another class move there; the
    /// component is refit on its survivors (who stay put even if a
    /// sibling explains them better). Infeasible with zero survivors.
    pub fn trial_revise(&self, target: CompKey) -> Option<TrialResult> {
        let comp = self.comps.get(&target)?;
        let mut survivors: Vec<usize> = Vec::new();
        let mut reassign: Vec<(usize, CompKey)> = Vec::new();
        let mut incoming: BTreeMap<CompKey, Vec<usize>> = BTreeMap::new();
        for &i in &comp.members {
            let best = self.best_other(i, target);
            if best.class == target.class {
                survivors.push(i);
            } else {
                reassign.push((i, best));
                incoming.entry(best).or_default().push(i);
            }
        }
        if survivors.is_empty() {
            return None;
        }
        let mut delta_l = 0.0;
        // Target's own refit on survivors.
        let surv_refs: Vec<_> = survivors.iter().map(|&i| &self.data.samples[i]).collect();
        let new_target_params =
            mle_fit(self.data.feature_kind, &surv_refs, self.data.dim).unwrap();
        let old_ll: f64 = comp.members.iter().map(|&i| comp.logdens[i]).sum();
        let new_ll: f64 = surv_refs
            .iter()
            .map(|s| new_target_params.log_density(s).unwrap())
            .sum();
        delta_l += old_ll - new_ll;
        let mut refits = vec![(target, new_target_params)];
        for (dest, extra) in incoming {
            let recv = &self.comps[&dest];
            let (new_params, old_ll, new_ll) = self.refit_receiver(recv, &extra);
            delta_l += old_ll - new_ll;
            refits.push((dest, new_params));
        }
        Some(TrialResult {
            target,
            case: TrialCase::Revise,
            delta_omega: 0.0,
            delta_l,
            reassign,
            refits,
        })
    }

    fn refit_receiver(
        &self,
        recv: &LiveComponent,
        extra: &[usize],
    ) -> (ComponentParams, f64, f64) {
        let augmented: Vec<_> = recv
            .members
            .iter()
            .chain(extra)
            .map(|&i| &self.data.samples[i])
            .collect();
        let new_params = mle_fit(self.data.feature_kind, &augmented, self.data.dim).unwrap();
        let old_ll: f64 = recv.members.iter().map(|&i| recv.logdens[i]).sum();
        let new_ll: f64 = augmented
            .iter()
            .map(|s| new_params.log_density(s).unwrap())
            .sum();
        (new_params, old_ll, new_ll)
    }

    /// Best feasible trial for one component: min over the three cases,
    /// ties broken keep < revise < remove.
    pub fn best_trial(&self, target: CompKey) -> TrialResult {
        let mut best = self.trial_keep(target);
        for cand in [self.trial_revise(target), self.trial_remove(target)]
            .into_iter()
            .flatten()
        {
            if cand.delta_bic() < best.delta_bic() {
                best = cand;
            }
        }
        best
    }

    /// Evaluates every live component's best trial and commits the single
    /// change with the most negative BIC delta, if it is a strict
    /// improvement. Returns the committed record, or `None` at
    /// convergence. Ties break toward smaller class, then smaller
    /// component index, then case order keep < revise < remove.
    pub fn step(&mut self) -> Option<StepRecord> {
        let keys: Vec<CompKey> = self.comps.keys().copied().collect();
        let trials: Vec<TrialResult> = keys
            .par_iter()
            .map(|&key| self.best_trial(key))
            .collect();
        // Deterministic argmin: keys are iterated in sorted order, so a
        // strictly-smaller comparison implements the stated tie rule.
        let mut best: Option<TrialResult> = None;
        for t in trials {
            let better = match &best {
                None => true,
                Some(b) => {
                    t.delta_bic() < b.delta_bic()
                        || (t.delta_bic() == b.delta_bic()
                            && t.target == b.target
                            && t.case.rank() < b.case.rank())
                }
            };
            if better {
                best = Some(t);
            }
        }
        let best = best?;
        let eps = 1e-9 * self.bic.abs();
        if !(best.delta_bic() < -eps) {
            return None;
        }
        self.commit(best)
    }

    fn commit(&mut self, trial: TrialResult) -> Option<StepRecord> {
        let delta = trial.delta_bic();
        let target = trial.target;
        match trial.case {
            TrialCase::Keep => return None,
            TrialCase::Revise => {
                // Movers leave; survivors stay in the target.
                let mover_set: Vec<usize> = trial.reassign.iter().map(|&(i, _)| i).collect();
                let comp = self.comps.get_mut(&target).unwrap();
                comp.members.retain(|i| !mover_set.contains(i));
                comp.revised = true;
            }
            TrialCase::Remove => {
                let comp = self.comps.remove(&target).unwrap();
                drop(comp);
                self.removed.push(target);
            }
        }
        for (i, dest) in &trial.reassign {
            self.owner[*i] = *dest;
            self.comps.get_mut(dest).unwrap().members.push(*i);
        }
        for (key, params) in trial.refits {
            if key == target && !self.comps.contains_key(&key) {
                continue; // target was removed
            }
            let comp = self.comps.get_mut(&key).unwrap();
            comp.logdens = self
                .data
                .samples
                .iter()
                .map(|s| params.log_density(s).unwrap())
                .collect();
            comp.params = params;
        }
        self.bic += delta;
        let record = StepRecord {
            step: self.trace.len() + 1,
            bic: self.bic,
            num_detected: self.num_detected(),
            case: trial.case,
            class: target.class,
            component: target.index,
            accuracy: None,
        };
        self.trace.push(record.clone());
        Some(record)
    }

    /// Null-hypothesis test: clean iff no component was ever flagged and
    /// every sample is still explained by its labeled class.
    pub fn hypothesis_test(&self) -> Verdict {
        let any_flag = !self.removed.is_empty()
            || self.comps.values().any(|c| c.revised);
        if any_flag || self.num_detected() > 0 {
            Verdict::Poisoned
        } else {
            Verdict::Clean
        }
    }

    /// Partition-integrity check used by tests: disjoint, exhaustive,
    /// live-only membership consistent with the owner map.
    pub fn check_partitions(&self) -> bool {
        let mut seen = vec![false; self.data.len()];
        for (key, comp) in &self.comps {
            for &i in &comp.members {
                if seen[i] || self.owner[i] != *key {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn removed_components(&self) -> &[CompKey] {
        &self.removed
    }

    fn per_class_stats(&self, model: &ModelSet) -> Vec<ClassComponentStats> {
        let mut revised_keys: Vec<CompKey> = self
            .comps
            .iter()
            .filter(|(_, c)| c.revised)
            .map(|(&k, _)| k)
            .collect();
        // A component removed after being revised still counts as revised.
        for r in &self.trace {
            if r.case == TrialCase::Revise {
                let key = CompKey {
                    class: r.class,
                    index: r.component,
                };
                if !revised_keys.contains(&key) {
                    revised_keys.push(key);
                }
            }
        }
        (1..=self.data.num_classes)
            .map(|c| ClassComponentStats {
                class: c,
                components: model.mixtures[&c].order(),
                revised: revised_keys.iter().filter(|k| k.class == c).count(),
                removed: self.removed.iter().filter(|k| k.class == c).count(),
            })
            .collect()
    }

    /// Consumes the state: extracts the sanitized set {i : t_i = y_i}
    /// and the report bookkeeping.
    pub fn finish(self, model: &ModelSet, initial_bic: f64) -> (Dataset, SanitizeOutcome) {
        let removed_sample_ids = self.detected_ids();
        let keep: Vec<bool> = (0..self.data.len())
            .map(|i| self.owner[i].class == self.data.labels[i])
            .collect();
        let sanitized = self.data.restrict(&keep);
        let outcome = SanitizeOutcome {
            removed_sample_ids,
            verdict: self.hypothesis_test(),
            per_class: self.per_class_stats(model),
            trace: self.trace.clone(),
            initial_bic,
            final_bic: self.bic,
        };
        (sanitized, outcome)
    }
}

/// Runs the greedy loop to convergence and extracts the sanitized set.
pub fn sanitize(data: &Dataset, model: &ModelSet) -> Result<(Dataset, SanitizeOutcome)> {
    let mut s = Sanitizer::new(data, model)?;
    let initial = s.bic();
    while s.step().is_some() {}
    Ok(s.finish(model, initial))
}
