//! Synthetic label-shifted domain pairs.
//!
//! Both domains are Gaussian mixtures over the same class centroids. Class
//! counts follow the configured label distributions exactly (largest
//! remainder rounding), and the target is rotated in the plane of the first
//! two input coordinates and then translated.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Domain, FeatureDataset, LabelDistribution};
use crate::error::{Error, Result};

/// Named random streams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Pretrain = 3,
    Batches = 4,
    Sampler = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomainSpec {
    pub input_dim: usize,
    /// Distance of every class centroid from the origin.
    pub centroid_radius: f64,
    /// Isotropic per-class standard deviation.
    pub class_std: f64,
    pub rotation_deg: f64,
    /// Length of the target translation, spread evenly over all coordinates.
    pub shift: f64,
    pub source: LabelDistribution,
    pub target: LabelDistribution,
    pub n_source: usize,
    pub n_target: usize,
    pub seed: u64,
}

/// `r^c` for `c = 0..C`, normalised; reversed puts the largest mass last.
pub fn geometric_frequencies(classes: usize, ratio: f64, reversed: bool) -> Result<LabelDistribution> {
    if classes == 0 || !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "geometric frequencies need classes >= 1 and ratio in (0, 1], got {classes} and {ratio}"
        )));
    }
    let mut w: Vec<f64> = (0..classes).map(|c| ratio.powi(c as i32)).collect();
    if reversed {
        w.reverse();
    }
    LabelDistribution::from_weights(&w)
}

/// Exact per-class counts summing to `n`: floors of `n·p_c`, with the
/// remainder going to the largest fractional parts (lowest class on ties).
pub fn largest_remainder_counts(dist: &LabelDistribution, n: usize) -> Vec<usize> {
    let exact: Vec<f64> = dist.probs().iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

impl SyntheticDomainSpec {
    /// Reversely unbalanced source and unbalanced target: class frequencies
    /// decay geometrically so the most frequent class is `imbalance` times
    /// the least frequent; the target uses the reversed profile.
    #[allow(clippy::too_many_arguments)]
    pub fn rsut(
        classes: usize,
        imbalance: f64,
        input_dim: usize,
        centroid_radius: f64,
        class_std: f64,
        rotation_deg: f64,
        shift: f64,
        n_source: usize,
        n_target: usize,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 || !(imbalance >= 1.0 && imbalance.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "need at least two classes and imbalance >= 1, got {classes} and {imbalance}"
            )));
        }
        let ratio = imbalance.powf(-1.0 / (classes - 1) as f64);
        let spec = Self {
            input_dim,
            centroid_radius,
            class_std,
            rotation_deg,
            shift,
            source: geometric_frequencies(classes, ratio, false)?,
            target: geometric_frequencies(classes, ratio, true)?,
            n_source,
            n_target,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn classes(&self) -> usize {
        self.source.num_classes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.rotation_deg != 0.0 && self.input_dim < 2 {
            return Err(Error::InvalidSpec("rotation needs at least two input dimensions".into()));
        }
        if !(self.class_std > 0.0 && self.class_std.is_finite()) {
            return Err(Error::InvalidSpec(format!("degenerate covariance: class_std = {}", self.class_std)));
        }
        for (name, v) in [
            ("centroid_radius", self.centroid_radius),
            ("rotation_deg", self.rotation_deg),
            ("shift", self.shift),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidSpec(format!("{name} must be finite")));
            }
        }
        if self.source.num_classes() != self.target.num_classes() || self.classes() < 2 {
            return Err(Error::InvalidSpec("source and target need the same number (>= 2) of classes".into()));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::InvalidSpec("both domains need samples".into()));
        }
        Ok(())
    }

    /// Applies the target transform to one point in place.
    pub fn transform(&self, x: &mut [f64]) {
        if self.input_dim >= 2 {
            let (s, c) = self.rotation_deg.to_radians().sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        let t = self.shift / (self.input_dim as f64).sqrt();
        for v in x.iter_mut() {
            *v += t;
        }
    }
}

/// Source and target samples plus the true target label distribution.
#[derive(Debug, Clone)]
pub struct Domains {
    pub source: FeatureDataset,
    pub target: FeatureDataset,
    pub true_target: LabelDistribution,
}

pub fn generate_domains(spec: &SyntheticDomainSpec) -> Result<Domains> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Data);
    let classes = spec.classes();
    let d = spec.input_dim;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut centroids = Array2::<f64>::zeros((classes, d));
    for mut row in centroids.rows_mut() {
        loop {
            row.mapv_inplace(|_| unit.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row *= spec.centroid_radius / norm;
                break;
            }
        }
    }

    let mut sample = |dist: &LabelDistribution, n: usize, domain: Domain| -> Result<FeatureDataset> {
        let counts = largest_remainder_counts(dist, n);
        let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
        labels.shuffle(&mut rng);
        let mut x = Array2::<f32>::zeros((n, d));
        let mut point = vec![0.0f64; d];
        for (i, &y) in labels.iter().enumerate() {
            for (j, p) in point.iter_mut().enumerate() {
                *p = centroids[[y, j]] + spec.class_std * unit.sample(&mut rng);
            }
            if domain == Domain::Target {
                spec.transform(&mut point);
            }
            for (j, &p) in point.iter().enumerate() {
                x[[i, j]] = p as f32;
            }
        }
        FeatureDataset::with_sequential_ids(x, Some(labels), classes, domain)
    };

    let source = sample(&spec.source, spec.n_source, Domain::Source)?;
    let target = sample(&spec.target, spec.n_target, Domain::Target)?;
    Ok(Domains {
        source,
        target,
        true_target: spec.target.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::empirical_label_distribution;
    use crate::kernel::mmd_squared;
    use ndarray::concatenate;
    use ndarray::Axis;

    fn spec(seed: u64) -> SyntheticDomainSpec {
        SyntheticDomainSpec::rsut(4, 8.0, 3, 3.0, 0.5, 30.0, 1.0, 150, 150, seed).unwrap()
    }

    #[test]
    fn geometric_example() {
        let s = geometric_frequencies(4, 0.5, false).unwrap();
        let t = geometric_frequencies(4, 0.5, true).unwrap();
        let expected = [8.0, 4.0, 2.0, 1.0].map(|v| v / 15.0);
        for c in 0..4 {
            assert!((s.probs()[c] - expected[c]).abs() < 1e-15);
            assert!((t.probs()[c] - expected[3 - c]).abs() < 1e-15);
        }
        let r = spec(0);
        assert!((r.source.probs()[0] / r.source.probs()[3] - 8.0).abs() < 1e-9);
        assert_eq!(r.target.probs()[3], r.source.probs()[0]);
    }

    #[test]
    fn largest_remainder_is_exact() {
        let d = LabelDistribution::new(vec![0.5, 0.25, 0.25]).unwrap();
        assert_eq!(largest_remainder_counts(&d, 8), vec![4, 2, 2]);
        let thirds = LabelDistribution::uniform(3).unwrap();
        assert_eq!(largest_remainder_counts(&thirds, 10), vec![4, 3, 3]);
        let g = geometric_frequencies(5, 0.6, false).unwrap();
        for n in [1, 7, 100, 1001] {
            let counts = largest_remainder_counts(&g, n);
            assert_eq!(counts.iter().sum::<usize>(), n);
            for (k, p) in counts.iter().zip(g.probs()) {
                assert!((*k as f64 - p * n as f64).abs() < 1.0);
            }
        }
    }

    #[test]
    fn class_frequencies_follow_spec() {
        let s = spec(1);
        let d = generate_domains(&s).unwrap();
        let counts = largest_remainder_counts(&s.target, 150);
        let emp = empirical_label_distribution(&d.target).unwrap();
        for (p, &n) in emp.probs().iter().zip(&counts) {
            assert!((p - n as f64 / 150.0).abs() < 1e-15);
        }
        assert_eq!(d.true_target, s.target);
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_domains(&spec(5)).unwrap();
        let b = generate_domains(&spec(5)).unwrap();
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        let c = generate_domains(&spec(6)).unwrap();
        assert_ne!(a.source, c.source);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = spec(0);
        s.class_std = 0.0;
        assert!(matches!(generate_domains(&s), Err(Error::InvalidSpec(_))));
        assert!(SyntheticDomainSpec::rsut(1, 2.0, 2, 1.0, 1.0, 0.0, 0.0, 10, 10, 0).is_err());
        assert!(SyntheticDomainSpec::rsut(3, 2.0, 1, 1.0, 1.0, 10.0, 0.0, 10, 10, 0).is_err());
    }

    #[test]
    fn identical_domains_are_indistinguishable() {
        let mut s = spec(11);
        s.rotation_deg = 0.0;
        s.shift = 0.0;
        s.target = s.source.clone();
        s.n_source = 200;
        s.n_target = 200;
        let d = generate_domains(&s).unwrap();
        let pooled = concatenate(Axis(0), &[d.source.features_f64().view(), d.target.features_f64().view()]).unwrap();
        let gamma = 1.0 / 3.0;
        let src: Vec<usize> = (0..200).collect();
        let same = mmd_squared(&src, pooled.view(), gamma).unwrap();

        let mut shifted = spec(11);
        shifted.n_source = 200;
        shifted.n_target = 200;
        let e = generate_domains(&shifted).unwrap();
        let pooled2 = concatenate(Axis(0), &[e.source.features_f64().view(), e.target.features_f64().view()]).unwrap();
        let diff = mmd_squared(&src, pooled2.view(), gamma).unwrap();
        assert!(same < 0.01, "{same}");
        assert!(diff > 5.0 * same, "{diff} vs {same}");
    }
}
