//! Point-mass filter on an equidistant grid.

use crate::decomp::Interval;
use crate::error::{Error, Result};
use crate::gaussian::normalize_weights;
use crate::model::ScalarModel;

/// Grid width in predicted standard deviations on each side when recentring.
pub const RECENTRE_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMode {
    /// Recentre on the predicted mean ± 6 predicted standard deviations each step.
    Recentred,
    /// Keep a fixed grid over the interval.
    Static(Interval),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassGrid {
    pub lo: f64,
    pub step: f64,
    pub masses: Vec<f64>,
}

impl PointMassGrid {
    /// Masses proportional to the initial density at the nodes.
    pub fn from_initial(model: &ScalarModel, nodes: usize, mode: GridMode) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidParameter(format!("PMF needs at least 2 nodes, got {nodes}")));
        }
        let init = model.initial();
        let span = match mode {
            GridMode::Recentred => {
                let (m, sd) = (init.mean_scalar(), init.var().sqrt());
                Interval::new(m - RECENTRE_SIGMAS * sd, m + RECENTRE_SIGMAS * sd)?
            }
            GridMode::Static(r) => r,
        };
        let step = span.width() / (nodes - 1) as f64;
        let mut masses: Vec<f64> = (0..nodes)
            .map(|i| crate::gaussian::normal_pdf(span.lo + i as f64 * step, init.mean_scalar(), init.var()))
            .collect();
        normalize_weights(&mut masses).map_err(|_| Error::DegenerateGrid)?;
        Ok(Self { lo: span.lo, step, masses })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    pub fn mean(&self) -> f64 {
        self.masses.iter().enumerate().map(|(i, m)| m * self.node(i)).sum()
    }

    /// Piecewise-constant density `mass / step` on cells centred at the nodes.
    pub fn pdf(&self, x: f64) -> f64 {
        let i = ((x - self.lo) / self.step).round();
        if i < 0.0 || i >= self.masses.len() as f64 {
            return 0.0;
        }
        self.masses[i as usize] / self.step
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        self.pdf(x).ln()
    }
}

/// Dense point-mass prediction through the transition density followed by the
/// Bayes update with `N(z; h_k(node), R)`. Returns the predicted and updated grids.
pub fn pmf_step(
    grid: &PointMassGrid,
    z: f64,
    model: &ScalarModel,
    k: usize,
    mode: GridMode,
) -> Result<(PointMassGrid, PointMassGrid)> {
    let prev = k.saturating_sub(1);
    let q = model.q1();
    let images: Vec<f64> = (0..grid.len()).map(|i| model.f1(grid.node(i), prev)).collect();
    let (lo, step) = match mode {
        GridMode::Recentred => {
            let mean: f64 = images.iter().zip(&grid.masses).map(|(y, m)| y * m).sum();
            let var: f64 = images.iter().zip(&grid.masses).map(|(y, m)| m * (y - mean) * (y - mean)).sum::<f64>() + q;
            let sd = var.sqrt();
            (mean - RECENTRE_SIGMAS * sd, 2.0 * RECENTRE_SIGMAS * sd / (grid.len() - 1) as f64)
        }
        GridMode::Static(r) => (r.lo, r.width() / (grid.len() - 1) as f64),
    };
    let inv_2q = 0.5 / q;
    let norm = step / (2.0 * std::f64::consts::PI * q).sqrt();
    let mut predicted: Vec<f64> = (0..grid.len())
        .map(|j| {
            let x = lo + j as f64 * step;
            let mut acc = 0.0;
            for (y, m) in images.iter().zip(&grid.masses) {
                let d = x - y;
                acc += m * (-d * d * inv_2q).exp();
            }
            acc * norm
        })
        .collect();
    normalize_weights(&mut predicted).map_err(|_| Error::DegenerateGrid)?;
    let predicted = PointMassGrid { lo, step, masses: predicted };
    let inv_2r = 0.5 / model.r1();
    let mut masses: Vec<f64> = predicted
        .masses
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let d = z - model.h1(predicted.node(j), k);
            m * (-d * d * inv_2r).exp()
        })
        .collect();
    normalize_weights(&mut masses).map_err(|_| Error::DegenerateGrid)?;
    Ok((predicted.clone(), PointMassGrid { masses, ..predicted }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{compensated_sum, Gaussian};
    use crate::model::linear_gaussian;

    #[test]
    fn flat_likelihood_leaves_masses() {
        let model = linear_gaussian(1.0, 0.1, 1e300, Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let g = PointMassGrid::from_initial(&model, 200, GridMode::Static(Interval::symmetric(8.0).unwrap())).unwrap();
        let (pred, post) = pmf_step(&g, 0.3, &model, 1, GridMode::Static(Interval::symmetric(8.0).unwrap())).unwrap();
        for (a, b) in pred.masses.iter().zip(&post.masses) {
            assert!((a - b).abs() <= 1e-14 * a.max(1e-300));
        }
        assert!((compensated_sum(&pred.masses) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cell_density() {
        let g = PointMassGrid { lo: 0.0, step: 0.5, masses: vec![0.25, 0.5, 0.25] };
        assert_eq!(g.pdf(0.5), 1.0);
        assert_eq!(g.pdf(0.1), 0.5);
        assert_eq!(g.pdf(-0.3), 0.0);
        assert_eq!(g.pdf(1.3), 0.0);
        assert_eq!(g.mean(), 0.5);
    }

    #[test]
    fn degenerate_grid_is_reported() {
        let model = linear_gaussian(1.0, 0.1, 1e-3, Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
        let g = PointMassGrid::from_initial(&model, 100, GridMode::Recentred).unwrap();
        assert_eq!(pmf_step(&g, 1e4, &model, 1, GridMode::Recentred).unwrap_err(), Error::DegenerateGrid);
    }
}
