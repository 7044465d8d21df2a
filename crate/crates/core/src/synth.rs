//! Seeded Gaussian-mixture generators: imbalanced class mixtures and
//! three-domain chains whose class means drift step by step.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sampler::Dataset;
use crate::seed::{self, derive_seed};

/// Per-class training counts of the seven-class land-cover set.
pub const LAND_COVER_TRAIN_COUNTS: [usize; 7] = [24930, 2979, 4485, 6029, 4911, 2240, 6826];

/// `LAND_COVER_TRAIN_COUNTS` scaled and rounded to the nearest integer (ties up).
pub fn reference_counts(scale: f64) -> Vec<usize> {
    LAND_COVER_TRAIN_COUNTS
        .iter()
        .map(|&c| (c as f64 * scale).round().max(1.0) as usize)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub counts: Vec<usize>,
    /// Distance of every class mean from the origin.
    pub separation: f64,
    /// Per-coordinate standard deviation within a class.
    pub spread: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "mixture needs >= 2 classes and >= 1 feature, got {} and {}",
                self.n_classes, self.feature_dim
            )));
        }
        if self.counts.len() != self.n_classes || self.counts.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need {} positive class counts, got {:?}",
                self.n_classes, self.counts
            )));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "separation {} must be finite and >= 0",
                self.separation
            )));
        }
        if !(self.spread.is_finite() && self.spread > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spread {} must be finite and > 0",
                self.spread
            )));
        }
        Ok(())
    }
}

/// Class-conditional isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    means: Vec<Vec<f64>>,
    spread: f64,
}

fn unit_direction(dim: usize, rng: &mut seed::Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl Mixture {
    /// Class means at distance `separation` from the origin along seeded
    /// random directions.
    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(derive_seed(spec.seed, 0));
        let means = (0..spec.n_classes)
            .map(|_| {
                unit_direction(spec.feature_dim, &mut rng)
                    .into_iter()
                    .map(|x| x * spec.separation)
                    .collect()
            })
            .collect();
        Ok(Mixture {
            means,
            spread: spec.spread,
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means[0].len()
    }

    /// Draws `counts[c]` rows of class `c`, grouped by class.
    pub fn sample(&self, counts: &[usize], seed: u64) -> Result<Dataset> {
        if counts.len() != self.n_classes() {
            return Err(Error::Shape(format!(
                "{} counts for {} classes",
                counts.len(),
                self.n_classes()
            )));
        }
        let dim = self.feature_dim();
        let total: usize = counts.iter().sum();
        let mut rng = seed::rng(seed);
        let mut data = Vec::with_capacity(total * dim);
        let mut labels = Vec::with_capacity(total);
        for (c, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                for &m in &self.means[c] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(m + self.spread * z);
                }
                labels.push(c);
            }
        }
        Dataset::new(Matrix::from_vec(total, dim, data)?, labels, self.n_classes())
    }

    fn shifted(&self, directions: &[Vec<f64>], amount: f64) -> Mixture {
        let means = self
            .means
            .iter()
            .zip(directions)
            .map(|(m, d)| m.iter().zip(d).map(|(a, b)| a + amount * b).collect())
            .collect();
        Mixture {
            means,
            spread: self.spread,
        }
    }
}

pub fn make_imbalanced_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    Mixture::from_spec(spec)?.sample(&spec.counts, derive_seed(spec.seed, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainChainSpec {
    pub base: MixtureSpec,
    /// Distance each class mean moves per hop.
    pub shift_magnitude: f64,
}

/// Source domain A, intermediate domain B and target domain: class `c`'s
/// mean moves by `shift_magnitude` along a fixed per-class direction at
/// each hop, so B sits on the segment from A to the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainChain {
    pub source: Mixture,
    pub intermediate: Mixture,
    pub target: Mixture,
}

impl DomainChain {
    pub fn from_spec(spec: &DomainChainSpec) -> Result<Self> {
        if !(spec.shift_magnitude.is_finite() && spec.shift_magnitude >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "shift magnitude {} must be finite and >= 0",
                spec.shift_magnitude
            )));
        }
        let source = Mixture::from_spec(&spec.base)?;
        let mut rng = seed::rng(derive_seed(spec.base.seed, 2));
        let directions: Vec<Vec<f64>> = (0..source.n_classes())
            .map(|_| unit_direction(source.feature_dim(), &mut rng))
            .collect();
        let intermediate = source.shifted(&directions, spec.shift_magnitude);
        let target = source.shifted(&directions, 2.0 * spec.shift_magnitude);
        Ok(DomainChain {
            source,
            intermediate,
            target,
        })
    }
}

/// Samples `spec.base.counts` rows from each of the three domains.
pub fn make_domain_chain(spec: &DomainChainSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let chain = DomainChain::from_spec(spec)?;
    let counts = &spec.base.counts;
    let seed = spec.base.seed;
    Ok((
        chain.source.sample(counts, derive_seed(seed, 3))?,
        chain.intermediate.sample(counts, derive_seed(seed, 4))?,
        chain.target.sample(counts, derive_seed(seed, 5))?,
    ))
}
