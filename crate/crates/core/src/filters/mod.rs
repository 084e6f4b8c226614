//! Online estimators driven step by step over a measurement sequence.

pub mod gmf;
pub mod pf;
pub mod pmf;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::decomp::{build_fsg_with, FsgDecomposition, PsgDecomposition};
use crate::error::{Error, Result};
use crate::gaussian::{compensated_sum, GaussianMixture, Vector};
use crate::model::ScalarModel;

pub use gmf::{
    fsgd_predict, fsgd_predict_shifted, gmf_predict_local, gmf_update, gmf_update_scalar, psgd_predict,
    select_fsg_terms, EvidenceRule, Prediction, PsgIntegration,
};
pub use pf::{multinomial_indices, pf_step, ParticleSet};
pub use pmf::{pmf_step, GridMode, PointMassGrid, RECENTRE_SIGMAS};

/// Default active-term window in standard deviations.
pub const DEFAULT_WINDOW: f64 = 6.0;

#[derive(Debug, Clone)]
pub enum Posterior {
    Mixture(GaussianMixture<1>),
    Particles(ParticleSet),
    Grid(PointMassGrid),
}

impl Posterior {
    pub fn mean(&self) -> f64 {
        match self {
            Posterior::Mixture(m) => m.moments().0[0],
            Posterior::Particles(p) => p.mean(),
            Posterior::Grid(g) => g.mean(),
        }
    }

    /// Weights or masses of the representation.
    pub fn weights(&self) -> &[f64] {
        match self {
            Posterior::Mixture(m) => m.weights(),
            Posterior::Particles(p) => &p.weights,
            Posterior::Grid(g) => &g.masses,
        }
    }

    /// Log-density; `None` for particle sets, which have no density.
    pub fn logpdf(&self, x: f64) -> Option<f64> {
        match self {
            Posterior::Mixture(m) => Some(m.logpdf(&Vector::<1>::new(x))),
            Posterior::Particles(_) => None,
            Posterior::Grid(g) => Some(g.logpdf(x)),
        }
    }

    /// Log-density at ascending points. Large mixtures are interpolated
    /// between exact evaluations to within `1e-10` nats.
    pub fn logpdf_batch(&self, xs: &[f64]) -> Option<Vec<f64>> {
        match self {
            Posterior::Mixture(m) if m.len() > 32 && xs.len() > 1000 => Some(m.logpdf_sorted_interpolated(xs, 1e-10)),
            Posterior::Mixture(m) => Some(m.logpdf_batch(xs)),
            Posterior::Particles(_) => None,
            Posterior::Grid(g) => Some(xs.iter().map(|&x| g.logpdf(x)).collect()),
        }
    }

    /// Density at lattice points `xs` with uniform spacing; particle sets are
    /// binned into cells of that width centred at the points.
    pub fn density_on(&self, xs: &[f64]) -> Vec<f64> {
        match self {
            Posterior::Mixture(m) => xs.iter().map(|&x| m.pdf(&Vector::<1>::new(x))).collect(),
            Posterior::Grid(g) => xs.iter().map(|&x| g.pdf(x)).collect(),
            Posterior::Particles(p) => particle_histogram(p, xs),
        }
    }
}

pub fn particle_histogram(p: &ParticleSet, xs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xs.len()];
    if xs.len() < 2 {
        return out;
    }
    let h = xs[1] - xs[0];
    for (s, w) in p.samples.iter().zip(&p.weights) {
        let i = ((s - xs[0]) / h).round();
        if i >= 0.0 && (i as usize) < xs.len() {
            out[i as usize] += w / h;
        }
    }
    out
}

/// Sum-to-one error and minimum weight of a weight vector.
fn weight_check(weights: &[f64]) -> (f64, f64) {
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    ((compensated_sum(weights) - 1.0).abs(), min)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Predictive mixture size (GMF), particle count (PF) or node count (PMF).
    pub active_terms: usize,
    pub clipped_mass: f64,
    /// Online wall-clock time of the predict and update pair.
    pub step_duration: Duration,
    pub predict_sum_error: f64,
    pub update_sum_error: f64,
    /// Smallest weight seen in either step.
    pub min_weight: f64,
    /// No decomposition term fell inside the active window.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct FilterState {
    pub posterior: Posterior,
    /// Predictive representation from the most recent step.
    pub predictive: Option<Posterior>,
    pub k: usize,
    pub diagnostics: StepDiagnostics,
}

impl FilterState {
    pub fn new(posterior: Posterior) -> Self {
        Self { posterior, predictive: None, k: 0, diagnostics: StepDiagnostics::default() }
    }
}

pub fn point_estimate(state: &FilterState) -> f64 {
    state.posterior.mean()
}

/// How GMF-FSGD follows a time-varying transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsgTracking {
    /// Move every `m_g` by the model's additive time shift.
    Shift,
    /// Rebuild the decomposition at each step with the stored scales.
    Rebuild,
}

#[derive(Debug, Clone)]
pub enum Estimator {
    Fsgd { decomp: Arc<FsgDecomposition>, window: f64, evidence: EvidenceRule },
    Psgd { decomp: Arc<PsgDecomposition>, window: f64, evidence: EvidenceRule, integration: PsgIntegration },
    Pf { particles: usize },
    Pmf { nodes: usize, mode: GridMode },
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Fsgd { .. } => "gmf_fsgd",
            Estimator::Psgd { .. } => "gmf_psgd",
            Estimator::Pf { .. } => "pf",
            Estimator::Pmf { .. } => "pmf",
        }
    }

    pub fn fsg_tracking(model: &ScalarModel) -> FsgTracking {
        if model.time_shift(0).is_some() {
            FsgTracking::Shift
        } else {
            FsgTracking::Rebuild
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, model: &ScalarModel, rng: &mut R) -> Result<FilterState> {
        let posterior = match self {
            Estimator::Fsgd { .. } | Estimator::Psgd { .. } => {
                Posterior::Mixture(GaussianMixture::single(model.initial().clone()))
            }
            Estimator::Pf { particles } => Posterior::Particles(ParticleSet::from_initial(model, *particles, rng)?),
            Estimator::Pmf { nodes, mode } => Posterior::Grid(PointMassGrid::from_initial(model, *nodes, *mode)?),
        };
        if let Estimator::Fsgd { .. } = self {
            log::debug!("FSGD on {} uses {:?}", model.name(), Self::fsg_tracking(model));
        }
        Ok(FilterState::new(posterior))
    }

    /// One prediction with `f_k` followed by the update with `z_{k+1}`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut FilterState,
        z: f64,
        model: &ScalarModel,
        rng: &mut R,
    ) -> Result<()> {
        let k = state.k + 1;
        let start = Instant::now();
        let mut diag = StepDiagnostics::default();
        let (predictive, posterior) = match (self, &state.posterior) {
            (Estimator::Fsgd { decomp, window, evidence }, Posterior::Mixture(post)) => {
                let pred = match Self::fsg_tracking(model) {
                    FsgTracking::Shift => {
                        let delta = model.time_shift(k - 1).expect("shift")[0]
                            - model.time_shift(decomp.k()).expect("shift")[0];
                        fsgd_predict_shifted(post, decomp, *window, delta)?
                    }
                    FsgTracking::Rebuild => {
                        let fresh =
                            build_fsg_with(model, k - 1, decomp.region(), decomp.spacing(), decomp.weight_rule())?
                                .with_scales(decomp.scales());
                        fsgd_predict(post, &fresh, *window)?
                    }
                };
                let updated = gmf_update_scalar(&pred.mixture, z, model, k, *evidence)?;
                diag.active_terms = pred.active_terms();
                diag.clipped_mass = pred.clipped_mass;
                diag.fallback = pred.fallback;
                (Posterior::Mixture(pred.mixture), Posterior::Mixture(updated))
            }
            (Estimator::Psgd { decomp, window, evidence, integration }, Posterior::Mixture(post)) => {
                let pred = psgd_predict(post, decomp, model, k - 1, *window, *integration)?;
                let updated = gmf_update_scalar(&pred.mixture, z, model, k, *evidence)?;
                diag.active_terms = pred.active_terms();
                diag.clipped_mass = pred.clipped_mass;
                diag.fallback = pred.fallback;
                (Posterior::Mixture(pred.mixture), Posterior::Mixture(updated))
            }
            (Estimator::Pf { .. }, Posterior::Particles(p)) => {
                let (samples, mut weights) = pf::pf_weigh(p, z, model, k, rng)?;
                crate::gaussian::normalize_weights(&mut weights).map_err(|_| Error::DegenerateParticles)?;
                let n = samples.len();
                let resampled = multinomial_indices(&weights, n, rng).into_iter().map(|i| samples[i]).collect();
                diag.active_terms = n;
                let predicted = ParticleSet { samples, weights };
                (
                    Posterior::Particles(predicted),
                    Posterior::Particles(ParticleSet { samples: resampled, weights: vec![1.0 / n as f64; n] }),
                )
            }
            (Estimator::Pmf { mode, .. }, Posterior::Grid(g)) => {
                let (pred, post) = pmf_step(g, z, model, k, *mode)?;
                diag.active_terms = pred.len();
                (Posterior::Grid(pred), Posterior::Grid(post))
            }
            _ => return Err(Error::InvalidParameter(format!("state does not belong to {}", self.name()))),
        };
        diag.step_duration = start.elapsed();
        // For PF the "predictive" weights are the normalized importance weights.
        let (pe, pmin) = weight_check(predictive.weights());
        let (ue, umin) = weight_check(posterior.weights());
        diag.predict_sum_error = pe;
        diag.update_sum_error = ue;
        diag.min_weight = pmin.min(umin);
        *state = FilterState { posterior, predictive: Some(predictive), k, diagnostics: diag };
        Ok(())
    }
}
