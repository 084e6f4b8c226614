//! Gaussian densities, Gaussian mixtures and the third-degree spherical-radial
//! cubature rule used for moment matching.

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub type Vector<const N: usize> = SVector<f64, N>;
pub type Matrix<const N: usize> = SMatrix<f64, N, N>;

/// Log-density of the scalar normal `N(x; mean, var)`.
#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + LN_2PI + var.ln())
}

#[inline]
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Peak value `1/sqrt((2 pi)^n |cov|)` of a Gaussian with covariance determinant `det`.
#[inline]
pub fn gaussian_peak(n: usize, det: f64) -> f64 {
    1.0 / ((2.0 * std::f64::consts::PI).powi(n as i32) * det).sqrt()
}

/// Multivariate normal density with a cached lower Cholesky factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<const N: usize> {
    mean: Vector<N>,
    cov: Matrix<N>,
    chol: Matrix<N>,
    log_norm: f64,
}

impl Gaussian<1> {
    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(Vector::<1>::new(mean), Matrix::<1>::new(var))
    }

    #[inline]
    pub fn mean_scalar(&self) -> f64 {
        self.mean[0]
    }

    #[inline]
    pub fn var(&self) -> f64 {
        self.cov[(0, 0)]
    }
}

impl<const N: usize> Gaussian<N> {
    /// Rejects covariances that are asymmetric beyond 1e-12 relative or not positive definite.
    pub fn new(mean: Vector<N>, cov: Matrix<N>) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let scale = cov.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let asym = (cov - cov.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::AsymmetricCovariance(asym));
        }
        let chol = cholesky_lower(&cov).ok_or(Error::SingularCovariance)?;
        let log_det: f64 = (0..N).map(|i| 2.0 * chol[(i, i)].ln()).sum();
        let log_norm = -0.5 * (N as f64 * LN_2PI + log_det);
        Ok(Self { mean, cov, chol, log_norm })
    }

    pub fn mean(&self) -> &Vector<N> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix<N> {
        &self.cov
    }

    /// Lower-triangular factor `L` with `L L^T = cov`.
    pub fn chol(&self) -> &Matrix<N> {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        (0..N).map(|i| 2.0 * self.chol[(i, i)].ln()).sum()
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &Vector<N>) -> f64 {
        let d = x - self.mean;
        forward_solve_norm_sq(&self.chol, &d)
    }

    pub fn logpdf(&self, x: &Vector<N>) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(x)
    }

    pub fn pdf(&self, x: &Vector<N>) -> f64 {
        self.logpdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<N> {
        let z = Vector::<N>::from_fn(|_, _| rng.sample(StandardNormal));
        self.mean + self.chol * z
    }

    /// `∫ N(x; m_a, Σ_a) N(x; m_b, Σ_b) dx = N(m_a; m_b, Σ_a + Σ_b)`.
    pub fn product_norm(&self, other: &Gaussian<N>) -> Result<f64> {
        Ok(self.product_log_norm(other)?.exp())
    }

    pub fn product_log_norm(&self, other: &Gaussian<N>) -> Result<f64> {
        let sum = Gaussian::new(other.mean, self.cov + other.cov)?;
        Ok(sum.logpdf(&self.mean))
    }

    /// Normalising constant and normalised density of the pointwise product of two Gaussians.
    pub fn product(&self, other: &Gaussian<N>) -> Result<(f64, Gaussian<N>)> {
        let norm = self.product_norm(other)?;
        let pa = invert_spd(&self.chol);
        let pb = invert_spd(&other.chol);
        let precision = pa + pb;
        let pchol = cholesky_lower(&precision).ok_or(Error::SingularCovariance)?;
        let cov = invert_spd(&pchol);
        let cov = 0.5 * (cov + cov.transpose());
        let mean = cov * (pa * self.mean + pb * other.mean);
        Ok((norm, Gaussian::new(mean, cov)?))
    }
}

fn cholesky_lower<const N: usize>(a: &Matrix<N>) -> Option<Matrix<N>> {
    let mut l = Matrix::<N>::zeros();
    for j in 0..N {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..N {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

#[inline]
fn forward_solve_norm_sq<const N: usize>(l: &Matrix<N>, d: &Vector<N>) -> f64 {
    let mut y = [0.0_f64; N];
    let mut acc = 0.0;
    for i in 0..N {
        let mut s = d[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
        acc += y[i] * y[i];
    }
    acc
}

/// Inverse of `L L^T` from its lower factor.
fn invert_spd<const N: usize>(l: &Matrix<N>) -> Matrix<N> {
    let mut linv = Matrix::<N>::zeros();
    for c in 0..N {
        for i in 0..N {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[(i, k)] * linv[(k, c)];
            }
            linv[(i, c)] = s / l[(i, i)];
        }
    }
    linv.transpose() * linv
}

/// Weighted sum of Gaussians sharing one dimension. Weights are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<const N: usize> {
    weights: Vec<f64>,
    components: Vec<Gaussian<N>>,
}

impl<const N: usize> GaussianMixture<N> {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian<N>>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::LengthMismatch { weights: weights.len(), components: components.len() });
        }
        if components.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidWeight(w));
        }
        Ok(Self { weights, components })
    }

    pub fn single(component: Gaussian<N>) -> Self {
        Self { weights: vec![1.0], components: vec![component] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian<N>] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Gaussian<N>)> {
        self.weights.iter().copied().zip(self.components.iter())
    }

    /// Rescales weights to sum to one. Tiny (even subnormal) weights are
    /// rescaled by their maximum first so the ratio never underflows.
    pub fn normalize(mut self) -> Result<Self> {
        normalize_weights(&mut self.weights)?;
        Ok(self)
    }

    /// Deviation of the weight sum from one, using compensated summation.
    pub fn weight_sum_error(&self) -> f64 {
        (compensated_sum(&self.weights) - 1.0).abs()
    }

    /// Mean and covariance of the (normalised) mixture.
    pub fn moments(&self) -> (Vector<N>, Matrix<N>) {
        let total: f64 = self.weights.iter().sum();
        let mean = self.iter().fold(Vector::<N>::zeros(), |acc, (w, g)| acc + g.mean() * (w / total));
        let cov = self.iter().fold(Matrix::<N>::zeros(), |acc, (w, g)| {
            let d = g.mean() - mean;
            acc + (g.cov() + d * d.transpose()) * (w / total)
        });
        (mean, cov)
    }

    /// `log Σ α_i N(x; m_i, Σ_i)` evaluated with log-sum-exp.
    pub fn logpdf(&self, x: &Vector<N>) -> f64 {
        let mut acc = LogSumExp::default();
        for (w, g) in self.iter() {
            acc.push(w.ln() + g.logpdf(x));
        }
        acc.value()
    }

    pub fn pdf(&self, x: &Vector<N>) -> f64 {
        self.iter().map(|(w, g)| w * g.pdf(x)).sum()
    }
}

/// Scalar log-terms `c_i − (x − m_i)²/(2 v_i)` sorted by mean.
struct SortedLogTerms {
    means: Vec<f64>,
    vars: Vec<f64>,
    consts: Vec<f64>,
    var_max: f64,
    const_max: f64,
}

impl SortedLogTerms {
    fn new(mut items: Vec<(f64, f64, f64)>) -> Self {
        items.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            var_max: items.iter().map(|t| t.1).fold(0.0, f64::max),
            const_max: items.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max),
            means: items.iter().map(|t| t.0).collect(),
            vars: items.iter().map(|t| t.1).collect(),
            consts: items.iter().map(|t| t.2).collect(),
        }
    }

    /// Pushes every term that can come within `slack` nats of the running best,
    /// walking outward from `x`. Returns the updated best.
    fn accumulate(&self, x: f64, mut best: f64, slack: f64, acc: &mut LogSumExp) -> f64 {
        let n = self.means.len();
        if n == 0 {
            return best;
        }
        let term = |i: usize| {
            let d = x - self.means[i];
            self.consts[i] - 0.5 * d * d / self.vars[i]
        };
        let start = self.means.partition_point(|&m| m < x).min(n - 1);
        best = best.max(term(start));
        if start > 0 {
            best = best.max(term(start - 1));
        }
        let reach = |best: f64| (2.0 * self.var_max * (self.const_max - best + slack)).max(0.0).sqrt();
        let mut radius = reach(best);
        let mut visit = |i: usize, best: &mut f64, radius: &mut f64| {
            let t = term(i);
            if t < *best - slack {
                return;
            }
            if t > *best {
                *best = t;
                *radius = reach(t);
            }
            acc.push(t);
        };
        let mut i = start as isize;
        while i >= 0 && x - self.means[i as usize] <= radius {
            visit(i as usize, &mut best, &mut radius);
            i -= 1;
        }
        let mut i = start + 1;
        while i < n && self.means[i] - x <= radius {
            visit(i, &mut best, &mut radius);
            i += 1;
        }
        best
    }
}

impl SortedLogTerms {
    /// `(log p(x), d/dx log p(x))` from the terms within `slack` of the best.
    fn value_and_slope(&self, x: f64, slack: f64, scratch: &mut Vec<(f64, f64)>) -> (f64, f64) {
        scratch.clear();
        let n = self.means.len();
        let term = |i: usize| {
            let d = x - self.means[i];
            (self.consts[i] - 0.5 * d * d / self.vars[i], -d / self.vars[i])
        };
        let start = self.means.partition_point(|&m| m < x).min(n - 1);
        let mut best = term(start).0;
        if start > 0 {
            best = best.max(term(start - 1).0);
        }
        let reach = |best: f64| (2.0 * self.var_max * (self.const_max - best + slack)).max(0.0).sqrt();
        let mut radius = reach(best);
        let mut visit = |i: usize, best: &mut f64, radius: &mut f64| {
            let (t, g) = term(i);
            if t < *best - slack {
                return;
            }
            if t > *best {
                *best = t;
                *radius = reach(t);
            }
            scratch.push((t, g));
        };
        let mut i = start as isize;
        while i >= 0 && x - self.means[i as usize] <= radius {
            visit(i as usize, &mut best, &mut radius);
            i -= 1;
        }
        let mut i = start + 1;
        while i < n && self.means[i] - x <= radius {
            visit(i, &mut best, &mut radius);
            i += 1;
        }
        let (mut sum, mut slope) = (0.0, 0.0);
        for &(t, g) in scratch.iter() {
            let e = (t - best).exp();
            sum += e;
            slope += e * g;
        }
        (best + sum.ln(), slope / sum)
    }
}

/// Cubic Hermite interpolation on `[a, b]` from values and slopes at the ends.
#[inline]
fn hermite(a: f64, b: f64, (fa, da): (f64, f64), (fb, db): (f64, f64), x: f64) -> f64 {
    let h = b - a;
    let t = (x - a) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * fa + (t3 - 2.0 * t2 + t) * h * da + (-2.0 * t3 + 3.0 * t2) * fb + (t3 - t2) * h * db
}

impl GaussianMixture<1> {
    /// Log-density at many scalar points. Terms more than 30 nats below the
    /// running maximum are skipped (relative effect < 1e-13 per term).
    /// Low-weight components are visited only where the heavy ones fail to
    /// dominate them by that margin.
    pub fn logpdf_batch(&self, xs: &[f64]) -> Vec<f64> {
        const SLACK: f64 = 30.0;
        let items: Vec<(f64, f64, f64)> = self
            .iter()
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, g)| (g.mean_scalar(), g.var(), w.ln() - 0.5 * (LN_2PI + g.var().ln())))
            .collect();
        let const_max = items.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
        let split = const_max - SLACK - 10.0;
        let (heavy, light): (Vec<_>, Vec<_>) = items.into_iter().partition(|t| t.2 >= split);
        let heavy = SortedLogTerms::new(heavy);
        let light = SortedLogTerms::new(light);
        xs.iter()
            .map(|&x| {
                let mut acc = LogSumExp::default();
                let best = heavy.accumulate(x, f64::NEG_INFINITY, SLACK, &mut acc);
                if best < light.const_max + SLACK {
                    light.accumulate(x, best, SLACK, &mut acc);
                }
                acc.value()
            })
            .collect()
    }

    /// Log-density at ascending points `xs`, interpolated between exact values
    /// and slopes on an interval tree refined until the midpoint interpolant is
    /// within `tol` nats of the exact value. Components whose weight is below
    /// `e^-30` of the heaviest term's reach are ignored, as in [`Self::logpdf_batch`].
    pub fn logpdf_sorted_interpolated(&self, xs: &[f64], tol: f64) -> Vec<f64> {
        debug_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        const SLACK: f64 = 30.0;
        if xs.len() < 2 || self.is_empty() {
            return self.logpdf_batch(xs);
        }
        let terms = SortedLogTerms::new(
            self.iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, g)| (g.mean_scalar(), g.var(), w.ln() - 0.5 * (LN_2PI + g.var().ln())))
                .collect(),
        );
        let sd_min = terms.vars.iter().copied().fold(f64::INFINITY, f64::min).sqrt();
        let mut scratch = Vec::new();
        let mut exact = |x: f64| terms.value_and_slope(x, SLACK, &mut scratch);
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        let cells = (((hi - lo) / sd_min).ceil() as usize).max(1);
        let h = (hi - lo) / cells as f64;
        let mut out = Vec::with_capacity(xs.len());
        let mut stack: Vec<(f64, f64, (f64, f64), (f64, f64), usize, usize)> = Vec::new();
        let mut start = 0;
        let mut left = (lo, exact(lo));
        for c in 0..cells {
            let b = if c + 1 == cells { hi } else { lo + (c + 1) as f64 * h };
            let end = if c + 1 == cells { xs.len() } else { start + xs[start..].partition_point(|&x| x < b) };
            let right = (b, exact(b));
            if end > start {
                stack.push((left.0, b, left.1, right.1, start, end));
                while let Some((a, b, fa, fb, s, e)) = stack.pop() {
                    if s == e {
                        continue;
                    }
                    let m = 0.5 * (a + b);
                    let fm = exact(m);
                    let split = s + xs[s..e].partition_point(|&x| x < m);
                    let err = (hermite(a, b, fa, fb, m) - fm.0).abs();
                    if err <= tol || e - s <= 2 || b - a < 1e-12 * (1.0 + m.abs()) {
                        // Points arrive in ascending order: left half first.
                        for &x in &xs[s..split] {
                            out.push(if e - s <= 2 { exact(x).0 } else { hermite(a, m, fa, fm, x) });
                        }
                        for &x in &xs[split..e] {
                            out.push(if e - s <= 2 { exact(x).0 } else { hermite(m, b, fm, fb, x) });
                        }
                    } else {
                        stack.push((m, b, fm, fb, split, e));
                        stack.push((a, m, fa, fm, s, split));
                    }
                }
            }
            left = right;
            start = end;
        }
        out
    }
}

/// Log of the smallest positive normal `f64`; evidence below it has underflowed.
pub const UNDERFLOW_LOG: f64 = -708.3964185322641;

pub(crate) fn normalize_weights(weights: &mut [f64]) -> Result<()> {
    let max = weights.iter().copied().fold(0.0_f64, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::DegenerateMixture);
    }
    let total: f64 = weights.iter().map(|w| w / max).sum();
    for w in weights.iter_mut() {
        *w = (*w / max) / total;
    }
    Ok(())
}

pub fn log_sum_exp<I: Iterator<Item = f64> + Clone>(terms: I) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, scaled: 0.0 }
    }
}

impl LogSumExp {
    #[inline]
    pub fn push(&mut self, t: f64) {
        if t > self.max {
            self.scaled = self.scaled * (self.max - t).exp() + 1.0;
            self.max = t;
        } else if t > f64::NEG_INFINITY {
            self.scaled += (t - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// The 2n points `m ± sqrt(n) L e_i` with equal weights `1/(2n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubaturePointSet<const N: usize> {
    pub points: Vec<Vector<N>>,
    pub weights: Vec<f64>,
}

impl<const N: usize> CubaturePointSet<N> {
    pub fn from_gaussian(g: &Gaussian<N>) -> Self {
        let points = cubature_points(g).collect::<Vec<_>>();
        let weights = vec![1.0 / (2 * N) as f64; 2 * N];
        Self { points, weights }
    }
}

fn cubature_points<const N: usize>(g: &Gaussian<N>) -> impl Iterator<Item = Vector<N>> + '_ {
    let scale = (N as f64).sqrt();
    (0..2 * N).map(move |p| {
        let col = g.chol().column(p % N) * scale;
        if p < N {
            g.mean() + col
        } else {
            g.mean() - col
        }
    })
}

/// Moment-matched statistics of `y = f(x)` for `x ~ N(m, Σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformedMoments<const N: usize, const M: usize> {
    pub mean: Vector<M>,
    pub cov: Matrix<M>,
    /// `E[(x - m)(y - E y)^T]`.
    pub cross_cov: SMatrix<f64, N, M>,
}

/// Third-degree spherical-radial cubature transform. Exact for affine `f`.
pub fn cubature_transform<const N: usize, const M: usize, F>(
    g: &Gaussian<N>,
    mut f: F,
) -> Result<TransformedMoments<N, M>>
where
    F: FnMut(&Vector<N>) -> Vector<M>,
{
    let w = 1.0 / (2 * N) as f64;
    let mut shift: Option<Vector<M>> = None;
    let mut sum = Vector::<M>::zeros();
    let mut sum_sq = Matrix::<M>::zeros();
    let mut cross = SMatrix::<f64, N, M>::zeros();
    for x in cubature_points(g) {
        let y = f(&x);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { point: format!("{:?}", x.as_slice()) });
        }
        let k = *shift.get_or_insert(y);
        let dy = y - k;
        sum += dy * w;
        sum_sq += dy * dy.transpose() * w;
        cross += (x - g.mean()) * dy.transpose() * w;
    }
    let k = shift.unwrap_or_else(Vector::<M>::zeros);
    let mean = k + sum;
    let cov = sum_sq - sum * sum.transpose();
    Ok(TransformedMoments { mean, cov: 0.5 * (cov + cov.transpose()), cross_cov: cross })
}

/// Scalar specialisation of [`cubature_transform`]: returns `(mean, var, cross)`.
#[inline]
pub fn cubature_scalar<F: FnMut(f64) -> f64>(mean: f64, var: f64, mut f: F) -> Result<(f64, f64, f64)> {
    let s = var.sqrt();
    let (a, b) = (f(mean + s), f(mean - s));
    if !a.is_finite() || !b.is_finite() {
        let bad = if a.is_finite() { mean - s } else { mean + s };
        return Err(Error::NonFinite { point: format!("[{bad}]") });
    }
    let ym = 0.5 * (a + b);
    let half = 0.5 * (a - b);
    Ok((ym, half * half, half * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1(m: f64, v: f64) -> Gaussian<1> {
        Gaussian::scalar(m, v).unwrap()
    }

    #[test]
    fn interpolated_batch_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let many = GaussianMixture::new(
            (0..1500).map(|i| 1.0 + (i % 7) as f64).collect(),
            (0..1500).map(|i| g1(-6.0 + i as f64 * 0.008, 0.02 + 0.08 * ((i % 5) as f64 / 4.0))).collect(),
        )
        .unwrap()
        .normalize()
        .unwrap();
        let bimodal = GaussianMixture::new(vec![0.3, 0.7], vec![g1(-3.0, 0.02), g1(3.0, 0.05)]).unwrap();
        let single = GaussianMixture::single(g1(0.5, 0.3));
        for mix in [&many, &bimodal, &single] {
            let mut xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>() * 16.0 - 8.0).collect();
            xs.sort_unstable_by(f64::total_cmp);
            let exact = mix.logpdf_batch(&xs);
            let fast = mix.logpdf_sorted_interpolated(&xs, 1e-10);
            let worst = exact.iter().zip(&fast).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-8, "max error {worst}");
        }
    }

    #[test]
    fn logpdf_reference_values() {
        assert_relative_eq!(g1(0.0, 1.0).pdf(&Vector::<1>::new(0.0)), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(g1(3.7, 1.0).pdf(&Vector::<1>::new(3.7)), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(g1(0.0, 1.0).pdf(&Vector::<1>::new(1.0)), 0.241_970_724_519_143_37, epsilon = 1e-15);
        assert_relative_eq!(normal_pdf(1.0, 0.0, 1.0), 0.241_970_724_519_143_37, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_covariances() {
        assert_eq!(Gaussian::scalar(0.0, 0.0), Err(Error::SingularCovariance));
        assert_eq!(Gaussian::scalar(0.0, -1.0), Err(Error::SingularCovariance));
        let asym = Matrix::<2>::new(1.0, 0.5, 0.4, 1.0);
        assert!(matches!(Gaussian::new(Vector::<2>::zeros(), asym), Err(Error::AsymmetricCovariance(_))));
        let indefinite = Matrix::<2>::new(1.0, 2.0, 2.0, 1.0);
        assert_eq!(Gaussian::new(Vector::<2>::zeros(), indefinite), Err(Error::SingularCovariance));
    }

    #[test]
    fn product_norm_reference_values() {
        assert_relative_eq!(
            g1(0.0, 1.0).product_norm(&g1(0.0, 1.0)).unwrap(),
            0.282_094_791_773_878_14,
            epsilon = 1e-15
        );
        let v = g1(0.4, 0.025).product_norm(&g1(0.4, 0.025)).unwrap();
        assert_relative_eq!(v, 1.784_124_116_152_771, epsilon = 1e-14);
    }

    #[test]
    fn mixture_moments_two_components() {
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![g1(-1.0, 1.0), g1(1.0, 1.0)]).unwrap();
        let (m, c) = gm.moments();
        assert_relative_eq!(m[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(c[(0, 0)], 2.0, epsilon = 1e-15);
        let single = GaussianMixture::single(g1(2.5, 0.3));
        let (m, c) = single.moments();
        assert_eq!((m[0], c[(0, 0)]), (2.5, 0.3));
    }

    #[test]
    fn mixture_logpdf_cases() {
        let g = g1(0.7, 2.0);
        let x = Vector::<1>::new(-0.3);
        assert_relative_eq!(GaussianMixture::single(g).logpdf(&x), g.logpdf(&x), epsilon = 1e-15);
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![g1(-1.0, 1.0), g1(1.0, 1.0)]).unwrap();
        assert_relative_eq!(gm.logpdf(&Vector::<1>::new(0.0)), 0.241_970_724_519_143_37_f64.ln(), epsilon = 1e-14);
        let far = gm.logpdf(&Vector::<1>::new(39.0));
        assert!(far.is_finite());
        assert_relative_eq!(far, 0.5_f64.ln() + normal_logpdf(39.0, 1.0, 1.0), max_relative = 1e-12);
    }

    #[test]
    fn batch_logpdf_matches_direct() {
        let comps: Vec<_> = (0..40).map(|i| g1(i as f64 * 0.37 - 7.0, 0.05 + 0.01 * (i % 7) as f64)).collect();
        let weights: Vec<f64> = (0..40).map(|i| 1.0 + (i % 5) as f64).collect();
        let gm = GaussianMixture::new(weights, comps).unwrap().normalize().unwrap();
        let xs: Vec<f64> = (0..300).map(|i| -60.0 + i as f64 * 0.4).collect();
        let batch = gm.logpdf_batch(&xs);
        for (x, b) in xs.iter().zip(batch) {
            let direct = gm.logpdf(&Vector::<1>::new(*x));
            assert_relative_eq!(b, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn normalize_cases() {
        let gm = GaussianMixture::new(vec![2.0, 2.0], vec![g1(0.0, 1.0), g1(1.0, 1.0)]).unwrap();
        assert_eq!(gm.normalize().unwrap().weights(), &[0.5, 0.5]);
        let gm = GaussianMixture::new(vec![1.0, 0.0], vec![g1(0.0, 1.0), g1(1.0, 1.0)]).unwrap();
        assert_eq!(gm.normalize().unwrap().weights(), &[1.0, 0.0]);
        let gm = GaussianMixture::new(vec![1e-320, 1e-320], vec![g1(0.0, 1.0), g1(1.0, 1.0)]).unwrap();
        assert_eq!(gm.normalize().unwrap().weights(), &[0.5, 0.5]);
        let gm = GaussianMixture::new(vec![0.0, 0.0], vec![g1(0.0, 1.0), g1(1.0, 1.0)]).unwrap();
        assert_eq!(gm.normalize(), Err(Error::DegenerateMixture));
    }

    #[test]
    fn mixture_construction_errors() {
        assert_eq!(GaussianMixture::<1>::new(vec![], vec![]), Err(Error::EmptyMixture));
        assert!(matches!(GaussianMixture::new(vec![-0.1], vec![g1(0.0, 1.0)]), Err(Error::InvalidWeight(_))));
        assert!(matches!(GaussianMixture::new(vec![1.0, 1.0], vec![g1(0.0, 1.0)]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn cubature_affine_and_square() {
        let g = g1(1.0, 4.0);
        let t = cubature_transform(&g, |x: &Vector<1>| x * 2.0).unwrap();
        assert_relative_eq!(t.mean[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(t.cov[(0, 0)], 16.0, epsilon = 1e-13);
        assert_relative_eq!(t.cross_cov[(0, 0)], 8.0, epsilon = 1e-13);
        let t = cubature_transform(&g1(0.0, 1.0), |x: &Vector<1>| Vector::<1>::new(x[0] * x[0])).unwrap();
        assert_relative_eq!(t.mean[0], 1.0, epsilon = 1e-15);
        let (m, v, c) = cubature_scalar(1.0, 4.0, |x| 2.0 * x).unwrap();
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(v, 16.0);
        assert_relative_eq!(c, 8.0);
    }

    #[test]
    fn cubature_reports_nan_point() {
        let err = cubature_transform(&g1(0.0, 1.0), |x: &Vector<1>| {
            Vector::<1>::new(if x[0] > 0.0 { f64::NAN } else { 0.0 })
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref point } if point.contains('1')));
    }

    #[test]
    fn cubature_points_reproduce_moments() {
        let cov = Matrix::<3>::new(2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5);
        let g = Gaussian::new(Vector::<3>::new(1.0, -2.0, 0.5), cov).unwrap();
        let set = CubaturePointSet::from_gaussian(&g);
        assert_eq!(set.points.len(), 6);
        let mean = set.points.iter().zip(&set.weights).fold(Vector::<3>::zeros(), |a, (p, w)| a + p * *w);
        let c = set
            .points
            .iter()
            .zip(&set.weights)
            .fold(Matrix::<3>::zeros(), |a, (p, w)| a + (p - mean) * (p - mean).transpose() * *w);
        assert!((mean - g.mean()).amax() < 1e-12);
        assert!((c - cov).amax() < 1e-12);
    }

    #[test]
    fn sampling_matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = g1(-1.5, 0.3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| g.sample(&mut rng)[0]).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        assert!((m + 1.5).abs() < 3.0 * (0.3 / n as f64).sqrt());
        assert!((v - 0.3).abs() < 3.0 * 0.3 * (2.0 / n as f64).sqrt());
    }
}
