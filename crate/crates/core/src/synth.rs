//! Synthetic corpora for experiments and acceptance suites: per-class
//! Gaussian blobs with configurable separation, and a multinomial topic
//! generator for count data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeatureKind, FeatureVector};
use crate::error::{Error, Result};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Unit-variance Gaussian blobs, one per class, with class c's mean at
/// ((c-1)*separation, 0, ..., 0).
pub fn gaussian_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 1 || per_class < 1 || dim < 1 {
        return Err(Error::input("classes, per_class, and dim must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 1..=classes {
        let shift = (c - 1) as f64 * separation;
        for _ in 0..per_class {
            let mut x: Vec<f64> = (0..dim).map(|_| gauss(&mut rng)).collect();
            x[0] += shift;
            samples.push(FeatureVector::Dense(x));
            labels.push(c);
        }
    }
    Dataset::new(samples, labels, None, FeatureKind::Continuous, dim, classes)
}

/// Topic documents: the vocabulary is split into `classes` equal blocks;
/// class c's word distribution puts `own_mass` of its probability on
/// block c and spreads the rest uniformly. Each document draws
/// `doc_len` tokens.
pub fn topic_documents(
    classes: usize,
    per_class: usize,
    vocab: usize,
    doc_len: usize,
    own_mass: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 1 || per_class < 1 || doc_len < 1 {
        return Err(Error::input("classes, per_class, and doc_len must be >= 1"));
    }
    if vocab < classes {
        return Err(Error::input("vocabulary smaller than class count"));
    }
    if !(0.0..=1.0).contains(&own_mass) {
        return Err(Error::input("own_mass must be in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = vocab / classes;
    let mut samples = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 1..=classes {
        let lo = (c - 1) * block;
        // Last class absorbs the vocabulary remainder.
        let hi = if c == classes { vocab } else { c * block };
        let own = (hi - lo) as f64;
        let other = (vocab - (hi - lo)) as f64;
        // Per-word probabilities inside/outside the class block.
        let p_in = own_mass / own;
        let p_out = if other > 0.0 {
            (1.0 - own_mass) / other
        } else {
            0.0
        };
        let cdf: Vec<f64> = {
            let mut acc = 0.0;
            (0..vocab)
                .map(|w| {
                    acc += if w >= lo && w < hi { p_in } else { p_out };
                    acc
                })
                .collect()
        };
        for _ in 0..per_class {
            let mut counts = vec![0u32; vocab];
            for _ in 0..doc_len {
                let u: f64 = rng.gen::<f64>() * cdf[vocab - 1];
                let w = cdf.partition_point(|&x| x < u).min(vocab - 1);
                counts[w] += 1;
            }
            let entries: Vec<(usize, u32)> = counts
                .iter()
                .enumerate()
                .filter(|&(_, &cnt)| cnt > 0)
                .map(|(w, &cnt)| (w, cnt))
                .collect();
            samples.push(FeatureVector::Sparse(entries));
            labels.push(c);
        }
    }
    Dataset::new(samples, labels, None, FeatureKind::Count, vocab, classes)
}
