//! Bootstrap particle filter with multinomial resampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{normalize_weights, UNDERFLOW_LOG};
use crate::model::ScalarModel;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub samples: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    /// `n` draws from the model's initial density with equal weights.
    pub fn from_initial<R: Rng + ?Sized>(model: &ScalarModel, n: usize, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("particle count must be at least 2, got {n}")));
        }
        let init = model.initial();
        let samples = (0..n).map(|_| init.sample(rng)[0]).collect();
        Ok(Self { samples, weights: vec![1.0 / n as f64; n] })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().zip(&self.weights).map(|(s, w)| s * w).sum()
    }
}

/// Draws `n` indices with probabilities `weights` (normalized) by inverting the
/// cumulative sum with binary search.
pub fn multinomial_indices<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for &w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let last = weights.len() - 1;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Propagates through `f_{k-1}` plus process noise, weights by `N(z; h_k(s), R)`
/// and resamples back to equal weights.
pub fn pf_step<R: Rng + ?Sized>(
    particles: &ParticleSet,
    z: f64,
    model: &ScalarModel,
    k: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    let (predicted, mut weights) = pf_weigh(particles, z, model, k, rng)?;
    normalize_weights(&mut weights).map_err(|_| Error::DegenerateParticles)?;
    let n = predicted.len();
    let samples = multinomial_indices(&weights, n, rng).into_iter().map(|i| predicted[i]).collect();
    Ok(ParticleSet { samples, weights: vec![1.0 / n as f64; n] })
}

/// Prediction and unnormalized (max-scaled) likelihood weights.
pub(crate) fn pf_weigh<R: Rng + ?Sized>(
    particles: &ParticleSet,
    z: f64,
    model: &ScalarModel,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sq = model.q1().sqrt();
    let inv_2r = 0.5 / model.r1();
    let prev = k.saturating_sub(1);
    let predicted: Vec<f64> =
        particles.samples.iter().map(|&s| model.f1(s, prev) + sq * rng.sample::<f64, _>(StandardNormal)).collect();
    let log_lik: Vec<f64> = predicted
        .iter()
        .zip(&particles.weights)
        .map(|(&s, &w)| {
            let d = z - model.h1(s, k);
            if w > 0.0 {
                w.ln() - d * d * inv_2r
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max >= UNDERFLOW_LOG) {
        return Err(Error::DegenerateParticles);
    }
    let weights = log_lik.iter().map(|&l| (l - max).exp()).collect();
    Ok((predicted, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::model::linear_gaussian;
    use crate::model::SeedRecord;

    #[test]
    fn point_mass_weights_copy_one_particle() {
        let mut rng = SeedRecord::new(5, 0).rng();
        let idx = multinomial_indices(&[1.0, 0.0, 0.0, 0.0], 50, &mut rng);
        assert!(idx.iter().all(|&i| i == 0));
        let idx = multinomial_indices(&[0.0, 0.0, 0.0, 2.0], 50, &mut rng);
        assert!(idx.iter().all(|&i| i == 3));
    }

    #[test]
    fn resampled_weights_are_equal() {
        let model = linear_gaussian(0.9, 0.1, 0.1, Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let mut rng = SeedRecord::new(1, 1).rng();
        let p = ParticleSet::from_initial(&model, 100, &mut rng).unwrap();
        let next = pf_step(&p, 0.4, &model, 1, &mut rng).unwrap();
        assert!(next.weights.iter().all(|&w| w == 0.01));
        assert_eq!(next.len(), 100);
    }

    #[test]
    fn weighted_mean() {
        let p = ParticleSet { samples: vec![0.0, 2.0], weights: vec![0.25, 0.75] };
        assert_eq!(p.mean(), 1.5);
    }

    #[test]
    fn rejects_tiny_sets_and_underflow() {
        let model = linear_gaussian(1.0, 0.1, 1e-4, Gaussian::scalar(0.0, 1e-6).unwrap()).unwrap();
        let mut rng = SeedRecord::new(2, 0).rng();
        assert!(ParticleSet::from_initial(&model, 1, &mut rng).is_err());
        let p = ParticleSet::from_initial(&model, 10, &mut rng).unwrap();
        assert_eq!(pf_step(&p, 1e6, &model, 1, &mut rng), Err(Error::DegenerateParticles));
    }
}
