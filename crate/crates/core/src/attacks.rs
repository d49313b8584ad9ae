//! Embedded error-generic poisoning: real samples from donor classes are
//! relabeled into victim classes and shuffled into the training order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureVector};
use crate::error::{Error, Result};

/// One poisoning campaign: how many donor samples go into each victim
/// class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackSpec {
    pub injections: Vec<Injection>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Injection {
    pub donor_class: usize,
    pub victim_class: usize,
    pub count: usize,
}

/// Per-class reserves of held-out real samples available for injection.
#[derive(Clone, Debug)]
pub struct PoisonPools {
    /// pools[c - 1] holds class c's leftover samples.
    pub pools: Vec<Vec<FeatureVector>>,
}

impl PoisonPools {
    pub fn available(&self, class: usize) -> usize {
        self.pools.get(class - 1).map_or(0, Vec::len)
    }
}

/// Clean data plus injected mislabeled samples, shuffled, with ground
/// truth retained for scoring.
#[derive(Clone, Debug)]
pub struct PoisonedDataset {
    pub dataset: Dataset,
    /// (original donor class, assigned victim class) per injected sample,
    /// aligned with the post-shuffle positions where `poison_truth` is true.
    pub provenance: Vec<(usize, usize)>,
}

/// Stratified split into train / test / per-class poison pools.
/// `fractions` = (train, test); the remainder of each class feeds its
/// pool. Deterministic for a fixed seed.
pub fn split_pools(
    full: &Dataset,
    train_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, PoisonPools)> {
    if train_frac <= 0.0 || test_frac <= 0.0 || train_frac + test_frac > 1.0 {
        return Err(Error::input(
            "split fractions must be positive and sum to at most 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_s = Vec::new();
    let mut train_y = Vec::new();
    let mut test_s = Vec::new();
    let mut test_y = Vec::new();
    let mut pools = vec![Vec::new(); full.num_classes];
    for c in 1..=full.num_classes {
        let mut idx = full.class_indices(c);
        let n = idx.len();
        let n_train = (train_frac * n as f64).round() as usize;
        let n_test = (test_frac * n as f64).round() as usize;
        if n_train == 0 || n_test == 0 {
            return Err(Error::input(format!(
                "class {c} too small ({n} samples) for the requested split"
            )));
        }
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            if pos < n_train {
                train_s.push(full.samples[i].clone());
                train_y.push(c);
            } else if pos < n_train + n_test.min(n - n_train) {
                test_s.push(full.samples[i].clone());
                test_y.push(c);
            } else {
                pools[c - 1].push(full.samples[i].clone());
            }
        }
    }
    let train = Dataset::new(
        train_s,
        train_y,
        None,
        full.feature_kind,
        full.dim,
        full.num_classes,
    )?;
    let test = Dataset::new(
        test_s,
        test_y,
        None,
        full.feature_kind,
        full.dim,
        full.num_classes,
    )?;
    Ok((train, test, PoisonPools { pools }))
}

/// Executes a spec: donors are drawn uniformly without replacement from
/// their pool, relabeled to the victim class, appended, and the whole
/// set is shuffled with the spec seed so insertion position carries no
/// signal.
pub fn inject(clean: &Dataset, pools: &PoisonPools, spec: &AttackSpec) -> Result<PoisonedDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut drawn_per_class = vec![0usize; clean.num_classes];
    let mut samples = clean.samples.clone();
    let mut labels = clean.labels.clone();
    let mut truth = vec![false; clean.len()];
    let mut provenance_slots: Vec<(usize, usize)> = Vec::new();
    for inj in &spec.injections {
        if inj.donor_class == inj.victim_class {
            return Err(Error::input(format!(
                "donor and victim class both {}",
                inj.donor_class
            )));
        }
        if inj.victim_class < 1 || inj.victim_class > clean.num_classes {
            return Err(Error::input(format!(
                "victim class {} out of range",
                inj.victim_class
            )));
        }
        if inj.donor_class < 1 || inj.donor_class > clean.num_classes {
            return Err(Error::input(format!(
                "donor class {} out of range",
                inj.donor_class
            )));
        }
        let pool = &pools.pools[inj.donor_class - 1];
        let already = &mut drawn_per_class[inj.donor_class - 1];
        if *already + inj.count > pool.len() {
            return Err(Error::input(format!(
                "injection wants {} samples from class {}, pool has {} left",
                inj.count,
                inj.donor_class,
                pool.len() - *already
            )));
        }
        // One shuffled order per donor class; successive injections from
        // the same donor consume successive prefix slices, so draws stay
        // without-replacement across injections too.
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut class_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(inj.donor_class as u64));
        order.shuffle(&mut class_rng);
        for &p in &order[*already..*already + inj.count] {
            samples.push(pool[p].clone());
            labels.push(inj.victim_class);
            truth.push(true);
            provenance_slots.push((inj.donor_class, inj.victim_class));
        }
        *already += inj.count;
    }
    // Shuffle everything, carrying truth and provenance along.
    let mut perm: Vec<usize> = (0..samples.len()).collect();
    perm.shuffle(&mut rng);
    let mut prov_by_slot: Vec<Option<(usize, usize)>> = vec![None; samples.len()];
    {
        let mut it = provenance_slots.into_iter();
        for (slot, p) in prov_by_slot.iter_mut().enumerate().skip(clean.len()) {
            let _ = slot;
            *p = it.next();
        }
    }
    let samples: Vec<FeatureVector> = perm.iter().map(|&i| samples[i].clone()).collect();
    let labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
    let truth: Vec<bool> = perm.iter().map(|&i| truth[i]).collect();
    let provenance: Vec<(usize, usize)> = perm
        .iter()
        .filter_map(|&i| prov_by_slot[i])
        .collect();
    let dataset = Dataset::new(
        samples,
        labels,
        Some(truth),
        clean.feature_kind,
        clean.dim,
        clean.num_classes,
    )?;
    Ok(PoisonedDataset {
        dataset,
        provenance,
    })
}

/// Attack index `i`: every donor class c in 1..=i spreads its budget as
/// evenly as possible over all victim classes w != c, remainders going
/// to the lowest victim ids.
pub fn multiclass_attack(
    clean: &Dataset,
    pools: &PoisonPools,
    i: usize,
    per_donor_budget: usize,
    seed: u64,
) -> Result<PoisonedDataset> {
    let w = clean.num_classes;
    if i < 1 || i > w {
        return Err(Error::input(format!(
            "attack index {i} out of range 1..={w}"
        )));
    }
    let mut injections = Vec::new();
    for c in 1..=i {
        let victims: Vec<usize> = (1..=w).filter(|&v| v != c).collect();
        let base = per_donor_budget / victims.len();
        let rem = per_donor_budget % victims.len();
        for (pos, &v) in victims.iter().enumerate() {
            let count = base + usize::from(pos < rem);
            if count > 0 {
                injections.push(Injection {
                    donor_class: c,
                    victim_class: v,
                    count,
                });
            }
        }
    }
    inject(clean, pools, &AttackSpec { injections, seed })
}
