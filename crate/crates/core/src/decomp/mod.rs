//! Separable decompositions of a scalar Gaussian transition density into sums of
//! products of one-argument Gaussians.

pub mod cache;
pub mod fsg;
pub mod psg;

use crate::error::{Error, Result};
use crate::gaussian::normal_pdf;

pub use cache::{read_cache, write_cache, CachedDecomposition, CACHE_VERSION};
pub use fsg::{
    build_fsg, build_fsg_with, fsg_criterion, fsg_evaluate, fsg_objective, fsg_shift, optimize_fsg_scales,
    CriterionLattice, FsgDecomposition, FsgObjective, FsgOptimization, FsgScales, WeightRule,
};
pub use psg::{build_psg, psg_adapt, psg_evaluate, psg_relative_l2, PsgDecomposition, VarianceRule};

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half_width: f64) -> Result<Self> {
        Self::new(-half_width, half_width)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// `lo, lo + step, ...` up to `hi` (inclusive when `step` divides the width).
    pub fn lattice(&self, step: f64) -> Vec<f64> {
        let n = (self.width() / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.lo + i as f64 * step).collect()
    }

    /// `n + 1` equidistant points including both ends.
    pub fn even_lattice(&self, n: usize) -> Vec<f64> {
        let h = self.width() / n as f64;
        (0..=n).map(|i| if i == n { self.hi } else { self.lo + i as f64 * h }).collect()
    }

    /// Shrinks symmetrically to the given fraction of the width.
    pub fn interior(&self, fraction: f64) -> Self {
        let half = 0.5 * fraction * self.width();
        Self { lo: self.centre() - half, hi: self.centre() + half }
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// One product term `ω N(x'; m_g, var_g) N(x; m_x, var_x)`, where `x` is the
/// filtered state (FSG) or the image `f(x)` (PSG).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub omega: f64,
    pub m_g: f64,
    pub var_g: f64,
    pub m_x: f64,
    pub var_x: f64,
}

impl Term {
    #[inline]
    pub fn eval(&self, x_next: f64, x: f64) -> f64 {
        self.omega * normal_pdf(x_next, self.m_g, self.var_g) * normal_pdf(x, self.m_x, self.var_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionKind {
    Fsg,
    Psg,
}

impl std::fmt::Display for DecompositionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecompositionKind::Fsg => "FSG",
            DecompositionKind::Psg => "PSG",
        })
    }
}

/// Trapezoid weights for `n` points with uniform step `h`.
#[inline]
pub(crate) fn trapezoid_weight(i: usize, n: usize, h: f64) -> f64 {
    if i == 0 || i + 1 == n {
        0.5 * h
    } else {
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_construction() {
        let r = Interval::new(-1.0, 1.0).unwrap();
        assert_eq!(r.lattice(0.5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let q: f64 = 0.1;
        assert_eq!(Interval::symmetric(25.0).unwrap().lattice(0.05 * q.sqrt()).len(), 3163);
        let e = r.even_lattice(4);
        assert_eq!(e.len(), 5);
        assert_eq!(*e.last().unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_interval() {
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(0.0, f64::INFINITY).is_err());
    }
}
