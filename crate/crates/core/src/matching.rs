//! Target label-distribution estimation from prototypes and class-weighted
//! source sampling.
//!
//! The estimate mixes exact oracle counts with confidence-weighted
//! pseudo-label counts and adds one to every class:
//!
//! ```text
//! p̂_T(y) = (n_L,y + n̂_PL,y + 1) / (n_L + n̂_PL + C)
//! ```
//!
//! Source samples are then drawn with probability proportional to
//! `w(y_i) = p̂_T(y_i) / p_S(y_i)`, so the class mass of a source mini-batch
//! follows `p̂_T`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{empirical_label_distribution, FeatureDataset, LabelDistribution};
use crate::error::{Error, Result};
use crate::sampler::PrototypeState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    /// `n_L,c`, exact counts of oracle labels.
    pub oracle: Vec<u64>,
    /// `n̂_PL,c`, pseudo-label counts weighted by confidence.
    pub pseudo: Vec<f64>,
}

impl ClassCounts {
    pub fn zeros(classes: usize) -> Self {
        Self {
            oracle: vec![0; classes],
            pseudo: vec![0.0; classes],
        }
    }

    pub fn from_prototypes(protos: &PrototypeState, classes: usize) -> Result<Self> {
        Ok(Self {
            oracle: count_oracle(protos, classes)?,
            pseudo: count_pseudo(protos, classes)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.oracle.len()
    }
}

pub fn count_oracle(protos: &PrototypeState, classes: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; classes];
    for &label in protos.oracle_labeled.values() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        counts[label] += 1;
    }
    Ok(counts)
}

pub fn count_pseudo(protos: &PrototypeState, classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; classes];
    for pl in protos.pseudo_labeled.values() {
        if !(pl.confidence > 0.0 && pl.confidence <= 1.0) {
            return Err(Error::InvalidConfidence(pl.confidence));
        }
        if pl.class >= classes {
            return Err(Error::LabelOutOfRange {
                label: pl.class,
                classes,
            });
        }
        counts[pl.class] += pl.confidence;
    }
    Ok(counts)
}

/// Add-one smoothed estimate of the target label distribution.
pub fn estimate_target_distribution(counts: &ClassCounts) -> Result<LabelDistribution> {
    let classes = counts.num_classes();
    if classes == 0 || counts.pseudo.len() != classes {
        return Err(Error::DimensionMismatch {
            expected: classes,
            got: counts.pseudo.len(),
        });
    }
    if let Some(p) = counts.pseudo.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!("pseudo count {p} is negative")));
    }
    let n_l: f64 = counts.oracle.iter().map(|&c| c as f64).sum();
    let n_pl: f64 = counts.pseudo.iter().sum();
    let denom = n_l + n_pl + classes as f64;
    LabelDistribution::new(
        counts
            .oracle
            .iter()
            .zip(&counts.pseudo)
            .map(|(&o, &p)| (o as f64 + p + 1.0) / denom)
            .collect(),
    )
}

/// `ρ_i = w(y_i) / Σ_j w(y_j)` with `w(y) = p̂_T(y) / p_S(y)`.
pub fn source_sampling_probs(
    source: &FeatureDataset,
    p_hat: &LabelDistribution,
) -> Result<Vec<f64>> {
    let labels = source.labels().ok_or(Error::Unlabeled)?;
    if p_hat.num_classes() != source.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: source.num_classes(),
            got: p_hat.num_classes(),
        });
    }
    let p_s = empirical_label_distribution(source)?;
    let mut weights = Vec::with_capacity(p_hat.num_classes());
    for (class, (&target, &src)) in p_hat.probs().iter().zip(p_s.probs()).enumerate() {
        if src == 0.0 {
            if target > 0.0 {
                return Err(Error::UncoveredClass { class });
            }
            weights.push(0.0);
        } else {
            weights.push(target / src);
        }
    }
    let total: f64 = labels.iter().map(|&y| weights[y]).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::InvalidDistribution(
            "estimated target distribution has no mass on source classes".into(),
        ));
    }
    Ok(labels.iter().map(|&y| weights[y] / total).collect())
}

/// Uniform `1/n_S` sampling, used when matching is disabled.
pub fn uniform_sampling_probs(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Sum of `rho` per class.
pub fn induced_class_mass(labels: &[usize], rho: &[f64], classes: usize) -> Vec<f64> {
    let mut mass = vec![0.0; classes];
    for (&y, &r) in labels.iter().zip(rho) {
        mass[y] += r;
    }
    mass
}

/// Base-2 Jensen–Shannon divergence, in `[0, 1]`.
pub fn jsd(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: p.num_classes(),
            got: q.num_classes(),
        });
    }
    let kl_to_mid = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        total += 0.5 * kl_to_mid(a, m) + 0.5 * kl_to_mid(b, m);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Draws source indices with replacement according to `ρ`.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(rho: &[f64]) -> Result<Self> {
        WeightedIndex::new(rho)
            .map(|dist| Self { dist })
            .map_err(|e| Error::InvalidDistribution(e.to_string()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }

    pub fn batch<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<usize> {
        (0..size).map(|_| self.dist.sample(rng)).collect()
    }
}
