//! Predicted-state-grid decomposition
//! `N(a; b, Q) ≈ Σ_j ω_j N(a; m_j, s) N(b; m_j, s)` over `(x', f(x))`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gaussian::normal_pdf;

use super::{Interval, Term};

/// Smallest accepted ratio of extreme eigenvalues of the normal equations.
const MIN_RECIPROCAL_CONDITION: f64 = 1e-14;

/// How the shared variance `s = c · step²` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum VarianceRule {
    Fixed(f64),
    /// Minimize the least-squares residual over `c`.
    #[default]
    Optimized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsgDecomposition {
    terms: Vec<Term>,
    region: Interval,
    base_q: f64,
    step: f64,
}

impl PsgDecomposition {
    pub fn from_parts(terms: Vec<Term>, region: Interval, base_q: f64, step: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if !(base_q > 0.0 && step > 0.0) {
            return Err(Error::InvalidParameter("PSG q and step must be positive".into()));
        }
        Ok(Self { terms, region, base_q, step })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn region(&self) -> Interval {
        self.region
    }

    pub fn base_q(&self) -> f64 {
        self.base_q
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Shared variance of the `g` and `φ` factors.
    pub fn variance(&self) -> f64 {
        self.terms[0].var_g
    }

    pub fn variance_coefficient(&self) -> f64 {
        self.variance() / (self.step * self.step)
    }

    /// Weight of the term nearest the centre, free of edge effects.
    pub fn interior_weight(&self) -> f64 {
        self.terms[self.terms.len() / 2].omega
    }

    /// Location of lattice node `n`; node 0 is the first term.
    #[inline]
    pub fn node(&self, n: i64) -> f64 {
        self.terms[0].m_g + n as f64 * self.step
    }

    /// Node indices whose locations fall in `[lo, hi]`.
    pub fn node_range(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<i64> {
        let a = ((lo - self.terms[0].m_g) / self.step).ceil() as i64;
        let b = ((hi - self.terms[0].m_g) / self.step).floor() as i64;
        a..=b
    }

    /// The grid redefined beyond the region: node `n` with the interior weight.
    pub fn lattice_term(&self, n: i64) -> Term {
        let m = self.node(n);
        let s = self.variance();
        Term { omega: self.interior_weight(), m_g: m, var_g: s, m_x: m, var_x: s }
    }
}

/// Equidistant locations over `region` (the centre for `rank = 1`), shared
/// variance per `rule`, and signed weights from linear least squares on a lattice
/// with a quarter of the location step.
pub fn build_psg(q: f64, rank: usize, region: Interval, rule: VarianceRule) -> Result<PsgDecomposition> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::InvalidParameter(format!("PSG noise variance must be positive, got {q}")));
    }
    if rank == 0 {
        return Err(Error::InvalidParameter("PSG rank must be at least 1".into()));
    }
    let (locations, step) = if rank == 1 {
        (vec![region.centre()], region.width())
    } else {
        (region.even_lattice(rank - 1), region.width() / (rank - 1) as f64)
    };
    let eval = region.even_lattice(4 * (rank - 1).max(1));
    let problem = LeastSquares::new(q, &locations, &eval);
    let (c, fit) = match rule {
        VarianceRule::Fixed(c) => {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidParameter(format!("variance coefficient must be positive, got {c}")));
            }
            (c, problem.solve(c * step * step)?)
        }
        VarianceRule::Optimized => problem.optimize(step)?,
    };
    log::debug!("PSG rank {rank}: c={c:.6}, relative residual {:.3e}", fit.relative_residual());
    let s = c * step * step;
    let terms = locations
        .iter()
        .zip(fit.weights.iter())
        .map(|(&m, &omega)| Term { omega, m_g: m, var_g: s, m_x: m, var_x: s })
        .collect();
    PsgDecomposition::from_parts(terms, region, q, step)
}

struct Fit {
    weights: Vec<f64>,
    residual: f64,
    norm: f64,
}

impl Fit {
    fn relative_residual(&self) -> f64 {
        (self.residual.max(0.0) / self.norm).sqrt()
    }
}

struct LeastSquares<'a> {
    locations: &'a [f64],
    eval: &'a [f64],
    kernel: DMatrix<f64>,
    kernel_norm: f64,
}

impl<'a> LeastSquares<'a> {
    fn new(q: f64, locations: &'a [f64], eval: &'a [f64]) -> Self {
        let n = eval.len();
        let kernel = DMatrix::from_fn(n, n, |p, r| normal_pdf(eval[p], eval[r], q));
        let kernel_norm = kernel.norm_squared();
        Self { locations, eval, kernel, kernel_norm }
    }

    /// Normal equations `((GᵀG)∘(GᵀG)) ω = diag(Gᵀ K G)`.
    fn solve(&self, s: f64) -> Result<Fit> {
        let (n, m) = (self.eval.len(), self.locations.len());
        let g = DMatrix::from_fn(n, m, |p, j| normal_pdf(self.eval[p], self.locations[j], s));
        let gram = g.tr_mul(&g);
        let gram = gram.component_mul(&gram);
        let kg = &self.kernel * &g;
        let rhs = DVector::from_fn(m, |j, _| g.column(j).dot(&kg.column(j)));
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(min > max * MIN_RECIPROCAL_CONDITION) {
            return Err(Error::IllConditioned(format!(
                "PSG normal equations with {m} terms and variance {s:.4e} have condition {:.2e}; reduce the rank or the variance",
                max / min.max(f64::MIN_POSITIVE)
            )));
        }
        let coeffs = eig.eigenvectors.tr_mul(&rhs).component_div(&eig.eigenvalues);
        let w = &eig.eigenvectors * coeffs;
        let residual = self.kernel_norm - 2.0 * w.dot(&rhs) + w.dot(&(&gram * &w));
        Ok(Fit { weights: w.iter().copied().collect(), residual, norm: self.kernel_norm })
    }

    /// Golden-section search over `ln c` after a coarse scan of `c ∈ [1e-3, 10]`.
    fn optimize(&self, step: f64) -> Result<(f64, Fit)> {
        let objective = |ln_c: f64| match self.solve(ln_c.exp() * step * step) {
            Ok(fit) => (fit.relative_residual(), Some(fit)),
            Err(_) => (f64::INFINITY, None),
        };
        let (lo, hi) = (1e-3f64.ln(), 10f64.ln());
        let scan = 25;
        let grid: Vec<f64> = (0..scan).map(|i| lo + (hi - lo) * i as f64 / (scan - 1) as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&t| objective(t).0).collect();
        let best = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("non-empty scan");
        if !values[best].is_finite() {
            return Err(Error::IllConditioned("no variance coefficient gives a solvable PSG system".into()));
        }
        let mut left = grid[best.saturating_sub(1)];
        let mut right = grid[(best + 1).min(scan - 1)];
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = right - inv_phi * (right - left);
        let mut x2 = left + inv_phi * (right - left);
        let mut f1 = objective(x1).0;
        let mut f2 = objective(x2).0;
        while right - left > 1e-4 {
            if f1 <= f2 {
                right = x2;
                x2 = x1;
                f2 = f1;
                x1 = right - inv_phi * (right - left);
                f1 = objective(x1).0;
            } else {
                left = x1;
                x1 = x2;
                f1 = f2;
                x2 = left + inv_phi * (right - left);
                f2 = objective(x2).0;
            }
        }
        let mut ln_c = if f1 <= f2 { x1 } else { x2 };
        if values[best] < f1.min(f2) {
            ln_c = grid[best];
        }
        let (_, fit) = objective(ln_c);
        Ok((ln_c.exp(), fit.expect("finite objective has a fit")))
    }
}

/// `Σ_j ω_j N(x'; m_j, s) N(f(x); m_j, s)`; may be slightly negative off the ridge.
pub fn psg_evaluate(decomp: &PsgDecomposition, x_next: f64, fx: f64) -> f64 {
    decomp.terms.iter().map(|t| t.eval(x_next, fx)).sum()
}

/// Maps locations `m ↦ √(Q_new/Q_base)·m + shift`, scales variances by the ratio
/// and weights by its square root, so that
/// `p̂_new(a, b) = p̂_base((a − shift)/ρ, (b − shift)/ρ) / ρ`.
pub fn psg_adapt(base: &PsgDecomposition, q_new: f64, shift: f64) -> Result<PsgDecomposition> {
    if !(q_new.is_finite() && q_new > 0.0) {
        return Err(Error::InvalidParameter(format!("adapted noise variance must be positive, got {q_new}")));
    }
    let ratio = q_new / base.base_q;
    let rho = ratio.sqrt();
    let terms = base
        .terms
        .iter()
        .map(|t| Term {
            omega: t.omega * rho,
            m_g: rho * t.m_g + shift,
            var_g: t.var_g * ratio,
            m_x: rho * t.m_x + shift,
            var_x: t.var_x * ratio,
        })
        .collect();
    let region = Interval { lo: rho * base.region.lo + shift, hi: rho * base.region.hi + shift };
    PsgDecomposition::from_parts(terms, region, q_new, base.step * rho)
}

/// Relative `L2` error of the reconstruction against `N(a; b, Q)` on a square
/// lattice with the given step over `area × area`.
pub fn psg_relative_l2(decomp: &PsgDecomposition, area: Interval, step: f64) -> f64 {
    let n = (area.width() / step).ceil() as usize;
    let xs = area.even_lattice(n);
    let q = decomp.base_q;
    let (mut err, mut norm) = (0.0, 0.0);
    for &a in &xs {
        for &b in &xs {
            let p = normal_pdf(a, b, q);
            let d = p - psg_evaluate(decomp, a, b);
            err += d * d;
            norm += p * p;
        }
    }
    (err / norm).sqrt()
}

/// Default region for `rank` terms: half-width `(rank − 1)/2 · √Q`, giving a location step of `√Q`.
pub fn default_region(q: f64, rank: usize) -> Result<Interval> {
    Interval::symmetric(0.5 * (rank.max(2) - 1) as f64 * q.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const Q: f64 = 0.1;

    fn rank40() -> PsgDecomposition {
        build_psg(Q, 40, default_region(Q, 40).unwrap(), VarianceRule::Optimized).unwrap()
    }

    #[test]
    fn structure_invariants() {
        let d = rank40();
        assert_eq!(d.rank(), 40);
        for t in d.terms() {
            assert_eq!(t.m_g, t.m_x);
            assert_eq!(t.var_g, d.variance());
            assert_eq!(t.var_x, d.variance());
        }
        assert_relative_eq!(d.step(), Q.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn mid_grid_peak() {
        let d = rank40();
        let m = d.terms()[20].m_g;
        let v = psg_evaluate(&d, m, m);
        assert!((v / normal_pdf(0.0, 0.0, Q) - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn diagonal_sweep_interior() {
        let d = rank40();
        let inner = d.region().interior(0.8);
        let peak = normal_pdf(0.0, 0.0, Q);
        for a in inner.even_lattice(200) {
            let v = psg_evaluate(&d, a, a);
            assert!((v / peak - 1.0).abs() < 0.1, "at {a}: {v}");
        }
    }

    #[test]
    fn off_ridge_tail() {
        let d = rank40();
        let peak = normal_pdf(0.0, 0.0, Q);
        for a in d.region().interior(0.8).even_lattice(40) {
            let b = a + 10.5 * Q.sqrt();
            assert!(psg_evaluate(&d, a, b).abs() < 1e-6 * peak);
        }
    }

    #[test]
    fn rank_one_misses_ridge() {
        let d = build_psg(Q, 1, Interval::symmetric(3.0).unwrap(), VarianceRule::Optimized).unwrap();
        assert!(psg_relative_l2(&d, d.region(), 0.05) > 0.5);
    }

    #[test]
    fn zero_weights_vanish() {
        let d = rank40();
        let terms = d.terms().iter().map(|t| Term { omega: 0.0, ..*t }).collect();
        let z = PsgDecomposition::from_parts(terms, d.region(), Q, d.step()).unwrap();
        assert_eq!(psg_evaluate(&z, 0.3, -0.2), 0.0);
    }

    #[test]
    fn lattice_extension_is_translation_invariant() {
        let d = rank40();
        let eval = |a: f64, b: f64| -> f64 {
            let r = d.node_range(a.min(b) - 12.0 * Q.sqrt(), a.max(b) + 12.0 * Q.sqrt());
            r.map(|n| d.lattice_term(n).eval(a, b)).sum()
        };
        let shift = 7.0 * d.step();
        for &(a, b) in &[(0.1, 0.2), (-0.4, -0.1), (0.33, 0.05)] {
            let e0 = eval(a, b) - normal_pdf(a, b, Q);
            let e1 = eval(a + shift, b + shift) - normal_pdf(a + shift, b + shift, Q);
            assert!((e0 - e1).abs() < 1e-6, "{e0} vs {e1}");
        }
    }

    #[test]
    fn adapt_identity_and_scaling() {
        let d = rank40();
        assert_eq!(psg_adapt(&d, Q, 0.0).unwrap(), d);
        let big = psg_adapt(&d, 4.0 * Q, 0.0).unwrap();
        for (t, u) in d.terms().iter().zip(big.terms()) {
            assert_relative_eq!(u.m_g, 2.0 * t.m_g, max_relative = 1e-15);
            assert_relative_eq!(u.var_g.sqrt(), 2.0 * t.var_g.sqrt(), max_relative = 1e-15);
        }
        for &(a, b) in &[(0.3, 0.1), (-1.0, -0.8), (0.0, 0.0)] {
            assert_relative_eq!(
                psg_evaluate(&big, 2.0 * a, 2.0 * b),
                0.5 * psg_evaluate(&d, a, b),
                max_relative = 1e-12
            );
        }
        let moved = psg_adapt(&d, Q, 1.7).unwrap();
        for &(a, b) in &[(0.3, 0.1), (-1.0, -0.8)] {
            assert!((psg_evaluate(&moved, a + 1.7, b + 1.7) - psg_evaluate(&d, a, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn adapt_round_trip() {
        let d = rank40();
        let there = psg_adapt(&d, 0.37, 2.5).unwrap();
        let rho = (0.37 / Q).sqrt();
        let back = psg_adapt(&there, Q, -2.5 / rho).unwrap();
        for (t, u) in d.terms().iter().zip(back.terms()) {
            assert!((t.m_g - u.m_g).abs() < 1e-12);
            assert!((t.var_g - u.var_g).abs() < 1e-12);
            assert!((t.omega - u.omega).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let r = Interval::symmetric(1.0).unwrap();
        assert!(build_psg(0.0, 10, r, VarianceRule::Optimized).is_err());
        assert!(build_psg(Q, 0, r, VarianceRule::Optimized).is_err());
        assert!(build_psg(Q, 10, r, VarianceRule::Fixed(-1.0)).is_err());
        assert!(psg_adapt(&rank40(), -1.0, 0.0).is_err());
    }
}
