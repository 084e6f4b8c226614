//! Filtered-state-grid decomposition
//! `p(x'|x) ≈ Σ_j ω_j N(x'; f_k(u_j), Q) N(x; u_j, σ̄ Q / f_k'(u_j)²)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gaussian::normal_pdf;
use crate::model::ScalarModel;

use super::{trapezoid_weight, Interval, Term};

/// Exponent beyond which pair contributions are dropped (`e^-36 ≈ 2e-16`).
const PAIR_CUTOFF: f64 = 36.0;
/// Half-width, in standard deviations, of the per-term integration window.
const WINDOW_SIGMAS: f64 = 8.5;
/// Padding of the `x'` axis, in `√Q`, for lattice evaluations.
pub const DEFAULT_PADDING_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsgScales {
    pub sigma_bar: f64,
    pub omega_bar: f64,
}

impl Default for FsgScales {
    fn default() -> Self {
        Self { sigma_bar: 1.0, omega_bar: 1.0 }
    }
}

impl FsgScales {
    pub fn new(sigma_bar: f64, omega_bar: f64) -> Result<Self> {
        if !(sigma_bar.is_finite() && sigma_bar > 0.0 && omega_bar.is_finite() && omega_bar > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid FSG scales ({sigma_bar}, {omega_bar})")));
        }
        Ok(Self { sigma_bar, omega_bar })
    }
}

/// How term weights depend on the γ variance before the common factor `ω̄`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightRule {
    /// `ω_j = ω̄`.
    #[default]
    Uniform,
    /// `ω_j = ω̄ √(2π Σγ_j)`: each term matches the density at its own peak when `ω̄ = 1`.
    PeakMatched,
    /// `ω_j = ω̄ / √(2π Σγ_j)`.
    InverseWidth,
}

impl WeightRule {
    #[inline]
    pub fn unit_weight(self, var_x: f64) -> f64 {
        match self {
            WeightRule::Uniform => 1.0,
            WeightRule::PeakMatched => (2.0 * PI * var_x).sqrt(),
            WeightRule::InverseWidth => 1.0 / (2.0 * PI * var_x).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightRule::Uniform => "uniform",
            WeightRule::PeakMatched => "peak-matched",
            WeightRule::InverseWidth => "inverse-width",
        }
    }
}

impl std::str::FromStr for WeightRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WeightRule::Uniform),
            "peak-matched" => Ok(WeightRule::PeakMatched),
            "inverse-width" => Ok(WeightRule::InverseWidth),
            other => Err(format!("unknown FSG weight rule '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsgDecomposition {
    terms: Vec<Term>,
    rule: WeightRule,
    k: usize,
    region: Interval,
    spacing: f64,
    q: f64,
    scales: FsgScales,
}

impl FsgDecomposition {
    /// Reassembles a decomposition from stored parts, e.g. a cache file.
    pub fn from_parts(
        terms: Vec<Term>,
        rule: WeightRule,
        k: usize,
        region: Interval,
        spacing: f64,
        q: f64,
        scales: FsgScales,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if !(q > 0.0 && spacing > 0.0) {
            return Err(Error::InvalidParameter("FSG q and spacing must be positive".into()));
        }
        Ok(Self { terms, rule, k, region, spacing, q, scales })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn region(&self) -> Interval {
        self.region
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn scales(&self) -> FsgScales {
        self.scales
    }

    pub fn weight_rule(&self) -> WeightRule {
        self.rule
    }

    /// `Q / f'(u_j)²`, the γ variance before scaling by `σ̄`.
    pub fn unscaled_var(&self, j: usize) -> f64 {
        self.terms[j].var_x / self.scales.sigma_bar
    }

    /// Applies new scales: `Σγ_j = σ̄ v_j`, `ω_j = ω̄ · rule(Σγ_j)`.
    pub fn with_scales(&self, scales: FsgScales) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let var_x = t.var_x / self.scales.sigma_bar * scales.sigma_bar;
                Term { omega: scales.omega_bar * self.rule.unit_weight(var_x), var_x, ..*t }
            })
            .collect();
        Self { terms, scales, ..self.clone() }
    }

    /// `ω_j / ω̄`.
    #[inline]
    fn unit_weight(&self, j: usize) -> f64 {
        self.rule.unit_weight(self.terms[j].var_x)
    }
}

/// γ means on the lattice `region.lo + i·spacing`, `m_g = f_k(m_γ)`, `Σ_g = Q`,
/// `Σγ = Q / f_k'(m_γ)²` with unit scales and uniform weights.
pub fn build_fsg(model: &ScalarModel, k: usize, region: Interval, spacing: f64) -> Result<FsgDecomposition> {
    build_fsg_with(model, k, region, spacing, WeightRule::default())
}

pub fn build_fsg_with(
    model: &ScalarModel,
    k: usize,
    region: Interval,
    spacing: f64,
    rule: WeightRule,
) -> Result<FsgDecomposition> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("FSG spacing must be positive, got {spacing}")));
    }
    let q = model.q1();
    let terms = region
        .lattice(spacing)
        .into_iter()
        .map(|u| {
            let jac = model.jacobian1(u, k);
            if !(jac.abs() >= 1e-12) {
                return Err(Error::NearSingularJacobian { at: u, jacobian: jac });
            }
            let var_x = q / (jac * jac);
            Ok(Term { omega: rule.unit_weight(var_x), m_g: model.f1(u, k), var_g: q, m_x: u, var_x })
        })
        .collect::<Result<Vec<_>>>()?;
    FsgDecomposition::from_parts(terms, rule, k, region, spacing, q, FsgScales::default())
}

/// `Σ_j ω_j N(x'; m_g_j, Q) N(x; m_γ_j, Σγ_j)`.
pub fn fsg_evaluate(decomp: &FsgDecomposition, x_next: f64, x: f64) -> f64 {
    decomp.terms.iter().map(|t| t.eval(x_next, x)).sum()
}

/// Moves every `m_g` by `Δ_{k_new} − Δ_k` for models with `f_k = f_0 + Δ_k`.
pub fn fsg_shift(decomp: &FsgDecomposition, model: &ScalarModel, k_new: usize) -> Result<FsgDecomposition> {
    let (Some(to), Some(from)) = (model.time_shift(k_new), model.time_shift(decomp.k)) else {
        return Err(Error::UnsupportedModel(model.name().to_string()));
    };
    let delta = to[0] - from[0];
    let terms = decomp.terms.iter().map(|t| Term { m_g: t.m_g + delta, ..*t }).collect();
    Ok(FsgDecomposition { terms, k: k_new, ..decomp.clone() })
}

/// Quadratic form of the squared-error criterion in `ω̄` at a fixed `σ̄`:
/// `J(ω̄) = a − 2 ω̄ b + ω̄² c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsgObjective {
    pub sigma_bar: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FsgObjective {
    pub fn value(&self, omega_bar: f64) -> f64 {
        (self.a - 2.0 * omega_bar * self.b + omega_bar * omega_bar * self.c).max(0.0)
    }

    pub fn best_omega(&self) -> f64 {
        self.b / self.c
    }

    pub fn minimum(&self) -> f64 {
        self.value(self.best_omega())
    }
}

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mass of `N(μ, var)` inside `region`.
#[inline]
fn region_mass(region: Interval, mu: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    if mu - WINDOW_SIGMAS * sd >= region.lo && mu + WINDOW_SIGMAS * sd <= region.hi {
        1.0
    } else {
        std_normal_cdf((region.hi - mu) / sd) - std_normal_cdf((region.lo - mu) / sd)
    }
}

/// Precomputed `f_k` on a fine lattice over the region, shared by all terms.
struct ImageGrid {
    lo: f64,
    step: f64,
    fx: Vec<f64>,
}

impl ImageGrid {
    fn new(model: &ScalarModel, k: usize, region: Interval, step_max: f64) -> Self {
        let n = (region.width() / step_max).ceil().max(1.0) as usize;
        let xs = region.even_lattice(n);
        Self { lo: region.lo, step: region.width() / n as f64, fx: xs.iter().map(|&x| model.f1(x, k)).collect() }
    }

    fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }
}

/// Criterion pieces for the decomposition's shape at `sigma_bar` (its own `ω̄` is ignored).
///
/// The `x'` integrals run over the whole line and are analytic; `a` is exact,
/// `c` uses pairwise closed forms truncated to the region, and `b` integrates
/// `N(f_k(x); m_g, 2Q) γ_j(x)` per term by trapezoid.
pub fn fsg_objective(model: &ScalarModel, decomp: &FsgDecomposition, sigma_bar: f64) -> FsgObjective {
    let shaped = decomp.with_scales(FsgScales { sigma_bar, omega_bar: 1.0 });
    let grid = image_grid(model, decomp);
    objective_on(&shaped, &grid, model)
}

fn image_grid(model: &ScalarModel, decomp: &FsgDecomposition) -> ImageGrid {
    let q = decomp.q;
    let jmax = decomp.terms.iter().enumerate().map(|(j, _)| (q / decomp.unscaled_var(j)).sqrt()).fold(0.0, f64::max);
    let step = decomp.spacing.min((2.0 * q).sqrt() / (4.0 * jmax.max(1e-300)));
    ImageGrid::new(model, decomp.k, decomp.region, step)
}

fn objective_on(shaped: &FsgDecomposition, grid: &ImageGrid, model: &ScalarModel) -> FsgObjective {
    let q = shaped.q;
    let region = shaped.region;
    let a = region.width() / (2.0 * (PI * q).sqrt());
    let terms = &shaped.terms;
    let units: Vec<f64> = (0..terms.len()).map(|j| shaped.unit_weight(j)).collect();

    let mut b = 0.0;
    for (j, t) in terms.iter().enumerate() {
        let sd = t.var_x.sqrt();
        let lo = region.lo.max(t.m_x - WINDOW_SIGMAS * sd);
        let hi = region.hi.min(t.m_x + WINDOW_SIGMAS * sd);
        if hi <= lo {
            continue;
        }
        let mut acc = 0.0;
        if sd / 4.0 >= grid.step {
            let i0 = ((lo - grid.lo) / grid.step).floor().max(0.0) as usize;
            let i1 = (((hi - grid.lo) / grid.step).ceil() as usize).min(grid.fx.len() - 1);
            let n = i1 - i0 + 1;
            for i in i0..=i1 {
                let x = grid.x(i);
                acc += trapezoid_weight(i - i0, n, grid.step)
                    * normal_pdf(grid.fx[i], t.m_g, 2.0 * q)
                    * normal_pdf(x, t.m_x, t.var_x);
            }
        } else {
            let n = ((hi - lo) / (sd / 4.0)).ceil().max(2.0) as usize;
            let h = (hi - lo) / n as f64;
            for i in 0..=n {
                let x = lo + i as f64 * h;
                acc += trapezoid_weight(i, n + 1, h)
                    * normal_pdf(model.f1(x, shaped.k), t.m_g, 2.0 * q)
                    * normal_pdf(x, t.m_x, t.var_x);
            }
        }
        b += units[j] * acc;
    }

    let g_norm = 1.0 / (2.0 * (PI * q).sqrt());
    let mut c = 0.0;
    for j in 0..terms.len() {
        let tj = &terms[j];
        let self_pair = units[j]
            * units[j]
            * g_norm
            * normal_pdf(0.0, 0.0, 2.0 * tj.var_x)
            * region_mass(region, tj.m_x, 0.5 * tj.var_x);
        let mut cross = 0.0;
        for l in j + 1..terms.len() {
            let tl = &terms[l];
            let dg = tj.m_g - tl.m_g;
            let eg = dg * dg / (4.0 * q);
            if eg > PAIR_CUTOFF {
                continue;
            }
            let s = tj.var_x + tl.var_x;
            let du = tj.m_x - tl.m_x;
            let e = eg + du * du / (2.0 * s);
            if e > PAIR_CUTOFF {
                continue;
            }
            let mu = (tj.m_x * tl.var_x + tl.m_x * tj.var_x) / s;
            let var = tj.var_x * tl.var_x / s;
            cross += units[l] * (-e).exp() / (2.0 * PI * s).sqrt() * region_mass(region, mu, var);
        }
        c += self_pair + 2.0 * units[j] * g_norm * cross;
    }
    FsgObjective { sigma_bar: shaped.scales.sigma_bar, a, b, c }
}

/// Continuous criterion `∫_region ∫ (p − p̂)² dx' dx` at the decomposition's own scales.
pub fn fsg_criterion(model: &ScalarModel, decomp: &FsgDecomposition) -> f64 {
    fsg_objective(model, decomp, decomp.scales.sigma_bar).value(decomp.scales.omega_bar)
}

#[derive(Debug, Clone)]
pub struct FsgOptimization {
    pub decomposition: FsgDecomposition,
    pub criterion: f64,
    /// Squared `L2` norm of the transition density over the region, `J` at `ω̄ = 0`.
    pub reference: f64,
    /// The search ended on an end of the `σ̄` range.
    pub at_boundary: bool,
}

impl FsgOptimization {
    pub fn relative_l2(&self) -> f64 {
        (self.criterion / self.reference).sqrt()
    }
}

pub const SIGMA_BAR_RANGE: (f64, f64) = (1e-3, 1e3);

/// Minimizes the criterion over `σ̄ ∈ [1e-3, 1e3]` with `ω̄` in closed form at each
/// candidate: a coarse logarithmic scan followed by golden-section refinement.
pub fn optimize_fsg_scales(model: &ScalarModel, decomp: &FsgDecomposition) -> Result<FsgOptimization> {
    let grid = image_grid(model, decomp);
    let eval = |ln_s: f64| {
        let shaped = decomp.with_scales(FsgScales { sigma_bar: ln_s.exp(), omega_bar: 1.0 });
        objective_on(&shaped, &grid, model)
    };
    let (lo, hi) = (SIGMA_BAR_RANGE.0.ln(), SIGMA_BAR_RANGE.1.ln());
    let scan = 25;
    let candidates: Vec<(f64, FsgObjective)> = (0..scan)
        .map(|i| {
            let t = lo + (hi - lo) * i as f64 / (scan - 1) as f64;
            (t, eval(t))
        })
        .collect();
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.minimum().total_cmp(&b.1 .1.minimum()))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    let mut left = candidates[best.saturating_sub(1)].0;
    let mut right = candidates[(best + 1).min(scan - 1)].0;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let tol = 1e-4;
    let mut x1 = right - inv_phi * (right - left);
    let mut x2 = left + inv_phi * (right - left);
    let mut f1 = eval(x1);
    let mut f2 = eval(x2);
    while right - left > tol {
        if f1.minimum() <= f2.minimum() {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - inv_phi * (right - left);
            f1 = eval(x1);
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + inv_phi * (right - left);
            f2 = eval(x2);
        }
    }
    let mut opt = if f1.minimum() <= f2.minimum() { f1 } else { f2 };
    for (_, c) in [candidates[0], candidates[scan - 1]] {
        if c.minimum() < opt.minimum() {
            opt = c;
        }
    }
    let ln_opt = opt.sigma_bar.ln();
    let at_boundary = (ln_opt - lo).abs() < 2.0 * tol || (hi - ln_opt).abs() < 2.0 * tol;
    if at_boundary {
        log::warn!("FSG scale search hit the boundary at sigma_bar={}", opt.sigma_bar);
    }
    let omega_bar = opt.best_omega();
    let scales = FsgScales::new(opt.sigma_bar, omega_bar)?;
    Ok(FsgOptimization {
        decomposition: decomp.with_scales(scales),
        criterion: opt.minimum(),
        reference: opt.a,
        at_boundary,
    })
}

/// Tensor trapezoid lattice over `region × (f_k(region) ± padding·√Q)`.
#[derive(Debug, Clone)]
pub struct CriterionLattice {
    pub xs: Vec<f64>,
    pub x_nexts: Vec<f64>,
    pub hx: f64,
    pub hy: f64,
}

impl CriterionLattice {
    pub fn new(model: &ScalarModel, k: usize, region: Interval, step: f64, padding_sigmas: f64) -> Self {
        let nx = (region.width() / step).ceil() as usize;
        let xs = region.even_lattice(nx);
        let (fmin, fmax) = xs
            .iter()
            .map(|&x| model.f1(x, k))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
        let pad = padding_sigmas * model.q1().sqrt();
        let image = Interval { lo: fmin - pad, hi: fmax + pad };
        let ny = (image.width() / step).ceil() as usize;
        let x_nexts = image.even_lattice(ny);
        Self { hx: region.width() / nx as f64, hy: image.width() / ny as f64, xs, x_nexts }
    }

    /// Step `min(spacing, √Q)/4` in both axes.
    pub fn for_decomposition(model: &ScalarModel, decomp: &FsgDecomposition) -> Self {
        let step = decomp.spacing.min(decomp.q.sqrt()) / 4.0;
        Self::new(model, decomp.k, decomp.region, step, DEFAULT_PADDING_SIGMAS)
    }

    /// `Σ (p − p̂)² · cell area` with trapezoid weights.
    pub fn criterion<F: Fn(f64, f64) -> f64>(&self, model: &ScalarModel, k: usize, approx: F) -> f64 {
        let q = model.q1();
        let (nx, ny) = (self.xs.len(), self.x_nexts.len());
        let mut total = 0.0;
        for (i, &x) in self.xs.iter().enumerate() {
            let fx = model.f1(x, k);
            let wx = trapezoid_weight(i, nx, self.hx);
            let mut row = 0.0;
            for (l, &y) in self.x_nexts.iter().enumerate() {
                let d = normal_pdf(y, fx, q) - approx(y, x);
                row += trapezoid_weight(l, ny, self.hy) * d * d;
            }
            total += wx * row;
        }
        total
    }

    /// `∫∫ p̂` over the lattice.
    pub fn mass<F: Fn(f64, f64) -> f64>(&self, approx: F) -> f64 {
        let (nx, ny) = (self.xs.len(), self.x_nexts.len());
        let mut total = 0.0;
        for (i, &x) in self.xs.iter().enumerate() {
            for (l, &y) in self.x_nexts.iter().enumerate() {
                total += trapezoid_weight(i, nx, self.hx) * trapezoid_weight(l, ny, self.hy) * approx(y, x);
            }
        }
        total
    }
}
