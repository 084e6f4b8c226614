//! Gaussian-mixture filter steps: cubature measurement update and the two
//! decomposition-driven predictions.

use crate::decomp::{FsgDecomposition, PsgDecomposition};
use crate::error::{Error, Result};
use crate::gaussian::{
    cubature_scalar, cubature_transform, normal_logpdf, Gaussian, GaussianMixture, Vector, UNDERFLOW_LOG,
};
use crate::model::{ScalarModel, StateSpaceModel};

/// Pair terms whose Gaussian exponent exceeds this are treated as zero.
const EXPONENT_CUTOFF: f64 = 40.0;

/// Per-component evidence used to reweight mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvidenceRule {
    /// `p_v(z − ẑ_i)`, the measurement-noise density at the innovation.
    #[default]
    NoiseDensity,
    /// `N(z; ẑ_i, S_i)` with the innovation covariance.
    Innovation,
}

impl std::str::FromStr for EvidenceRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "noise" => Ok(EvidenceRule::NoiseDensity),
            "innovation" => Ok(EvidenceRule::Innovation),
            other => Err(format!("unknown evidence rule '{other}' (expected noise or innovation)")),
        }
    }
}

/// Cubature Kalman update of every component, then reweighting by the evidence.
/// The component count is unchanged.
pub fn gmf_update<const NX: usize, const NZ: usize>(
    prior: &GaussianMixture<NX>,
    z: &Vector<NZ>,
    model: &StateSpaceModel<NX, NZ>,
    k: usize,
    rule: EvidenceRule,
) -> Result<GaussianMixture<NX>> {
    let mut log_w = Vec::with_capacity(prior.len());
    let mut components = Vec::with_capacity(prior.len());
    for (alpha, g) in prior.iter() {
        let tm = cubature_transform(g, |x| model.h(x, k))?;
        let s = tm.cov + model.r();
        let s_inv = s.try_inverse().ok_or(Error::SingularCovariance)?;
        let gain = tm.cross_cov * s_inv;
        let innovation = z - tm.mean;
        let mean = g.mean() + gain * innovation;
        let cov = g.cov() - gain * s * gain.transpose();
        let cov = (cov + cov.transpose()) * 0.5;
        components.push(Gaussian::new(mean, cov)?);
        let evidence = match rule {
            EvidenceRule::NoiseDensity => model.measurement_noise().logpdf(&innovation),
            EvidenceRule::Innovation => Gaussian::new(tm.mean, s)?.logpdf(z),
        };
        log_w.push(if alpha > 0.0 { alpha.ln() + evidence } else { f64::NEG_INFINITY });
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max >= UNDERFLOW_LOG) {
        return Err(Error::DegenerateUpdate);
    }
    let weights = log_w.iter().map(|&l| (l - max).exp()).collect();
    GaussianMixture::new(weights, components)?.normalize()
}

/// Scalar specialisation of [`gmf_update`] with identical arithmetic.
pub fn gmf_update_scalar(
    prior: &GaussianMixture<1>,
    z: f64,
    model: &ScalarModel,
    k: usize,
    rule: EvidenceRule,
) -> Result<GaussianMixture<1>> {
    let r = model.r1();
    let mut log_w = Vec::with_capacity(prior.len());
    let mut components = Vec::with_capacity(prior.len());
    for (alpha, g) in prior.iter() {
        let (m, p) = (g.mean_scalar(), g.var());
        let (zhat, pzz, pxz) = cubature_scalar(m, p, |x| model.h1(x, k))?;
        let s = pzz + r;
        let gain = pxz / s;
        let innovation = z - zhat;
        components.push(Gaussian::scalar(m + gain * innovation, p - gain * s * gain)?);
        let evidence = match rule {
            EvidenceRule::NoiseDensity => normal_logpdf(innovation, 0.0, r),
            EvidenceRule::Innovation => normal_logpdf(z, zhat, s),
        };
        log_w.push(if alpha > 0.0 { alpha.ln() + evidence } else { f64::NEG_INFINITY });
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max >= UNDERFLOW_LOG) {
        return Err(Error::DegenerateUpdate);
    }
    let weights = log_w.iter().map(|&l| (l - max).exp()).collect();
    GaussianMixture::new(weights, components)?.normalize()
}

/// Per-component cubature prediction through `f_k` (exact for affine `f`).
pub fn gmf_predict_local<const NX: usize, const NZ: usize>(
    posterior: &GaussianMixture<NX>,
    model: &StateSpaceModel<NX, NZ>,
    k: usize,
) -> Result<GaussianMixture<NX>> {
    let components = posterior
        .components()
        .iter()
        .map(|g| {
            let tm = cubature_transform(g, |x| model.f(x, k))?;
            let cov = tm.cov + model.q();
            Gaussian::new(tm.mean, (cov + cov.transpose()) * 0.5)
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(posterior.weights().to_vec(), components)
}

/// Result of a decomposition-driven prediction.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Normalized predictive mixture, one component per active term.
    pub mixture: GaussianMixture<1>,
    /// `Σ_j β_j` before normalization, after clamping.
    pub beta_total: f64,
    /// Share of `Σ|β_j|` removed by clamping negative `β_j`.
    pub clipped_mass: f64,
    /// No term fell in any window; the nearest one was used.
    pub fallback: bool,
}

impl Prediction {
    pub fn active_terms(&self) -> usize {
        self.mixture.len()
    }

    /// Predictive density before normalization, `Σ_j β_j g_j(x')`.
    pub fn unnormalized_pdf(&self, x: f64) -> f64 {
        self.beta_total * self.mixture.pdf(&Vector::<1>::new(x))
    }
}

/// Indices of FSG terms with `|m_γ_j − m_i| ≤ w √(Σ_i + Σγ_j)` for some posterior component `i`.
/// Returns the nearest term and `true` when no window catches any term.
pub fn select_fsg_terms(decomp: &FsgDecomposition, posterior: &GaussianMixture<1>, window: f64) -> (Vec<usize>, bool) {
    let terms = decomp.terms();
    if window.is_infinite() {
        return ((0..terms.len()).collect(), false);
    }
    let (lo, h) = (decomp.region().lo, decomp.spacing());
    let tau = (20.0 * h) * (20.0 * h);
    let w2 = window * window;
    let mut active = vec![false; terms.len()];
    let comps: Vec<(f64, f64)> = posterior.components().iter().map(|g| (g.mean_scalar(), g.var())).collect();
    let last = terms.len() as i64 - 1;
    for &(m, p) in &comps {
        let r = window * (p + tau).sqrt();
        let a = (((m - r - lo) / h).ceil() as i64).max(0);
        let b = (((m + r - lo) / h).floor() as i64).min(last);
        for j in a..=b {
            let j = j as usize;
            let t = &terms[j];
            if !active[j] && t.var_x <= tau {
                let d = t.m_x - m;
                active[j] = d * d <= w2 * (p + t.var_x);
            }
        }
    }
    for (j, t) in terms.iter().enumerate() {
        if t.var_x > tau && !active[j] {
            active[j] = comps.iter().any(|&(m, p)| {
                let d = t.m_x - m;
                d * d <= w2 * (p + t.var_x)
            });
        }
    }
    let selected: Vec<usize> = (0..terms.len()).filter(|&j| active[j]).collect();
    if selected.is_empty() {
        let (mean, _) = posterior.moments();
        let j = terms
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1.m_x - mean[0]).abs().total_cmp(&(b.1.m_x - mean[0]).abs()))
            .map(|(j, _)| j)
            .expect("decomposition has terms");
        return (vec![j], true);
    }
    (selected, false)
}

/// Weighted Gaussians `(mean, var, weight)` grouped by variance octave and sorted
/// by mean, so a density sum only visits components within the exponent cutoff.
struct SortedComponents {
    buckets: Vec<(Vec<(f64, f64, f64)>, f64)>,
}

impl SortedComponents {
    fn new(mut items: Vec<(f64, f64, f64)>) -> Self {
        items.sort_unstable_by(|a, b| a.1.total_cmp(&b.1));
        let mut buckets: Vec<(Vec<(f64, f64, f64)>, f64)> = Vec::new();
        let mut octave = i32::MIN;
        for item in items {
            let o = item.1.log2().floor() as i32;
            if o != octave || buckets.is_empty() {
                octave = o;
                buckets.push((Vec::new(), 0.0));
            }
            let last = buckets.last_mut().expect("pushed");
            last.1 = last.1.max(item.1);
            last.0.push(item);
        }
        for b in &mut buckets {
            b.0.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        }
        Self { buckets }
    }

    /// `Σ_i w_i N(x; m_i, extra + v_i)`, dropping terms past the exponent cutoff.
    fn density(&self, x: f64, extra: f64) -> f64 {
        let mut acc = 0.0;
        for (items, max_var) in &self.buckets {
            let r = (2.0 * EXPONENT_CUTOFF * (extra + max_var)).sqrt();
            let lo = items.partition_point(|c| c.0 < x - r);
            let hi = items.partition_point(|c| c.0 <= x + r);
            for &(m, v, w) in &items[lo..hi] {
                let var = extra + v;
                let d = x - m;
                let e = 0.5 * d * d / var;
                if e < EXPONENT_CUTOFF {
                    acc += w * (-e).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                }
            }
        }
        acc
    }
}

/// Closed-form FSG prediction `β_j = ω_j Σ_i α_i N(m_γ_j; m_i, Σγ_j + Σ_i)` over the active terms.
pub fn fsgd_predict(posterior: &GaussianMixture<1>, decomp: &FsgDecomposition, window: f64) -> Result<Prediction> {
    fsgd_predict_shifted(posterior, decomp, window, 0.0)
}

/// As [`fsgd_predict`] with every `m_g` moved by `delta`.
pub fn fsgd_predict_shifted(
    posterior: &GaussianMixture<1>,
    decomp: &FsgDecomposition,
    window: f64,
    delta: f64,
) -> Result<Prediction> {
    let (active, fallback) = select_fsg_terms(decomp, posterior, window);
    let comps = SortedComponents::new(
        posterior.iter().filter(|(a, _)| *a > 0.0).map(|(a, g)| (g.mean_scalar(), g.var(), a)).collect(),
    );
    let terms = decomp.terms();
    let betas: Vec<f64> =
        active.iter().map(|&j| terms[j].omega * comps.density(terms[j].m_x, terms[j].var_x)).collect();
    let components = active.iter().map(|&j| Gaussian::scalar(terms[j].m_g + delta, terms[j].var_g)).collect();
    finish(betas, components, fallback)
}

fn finish(mut betas: Vec<f64>, components: Result<Vec<Gaussian<1>>>, fallback: bool) -> Result<Prediction> {
    let components = components?;
    let abs_total: f64 = betas.iter().map(|b| b.abs()).sum();
    let mut clipped = 0.0;
    for b in betas.iter_mut() {
        if *b < 0.0 {
            clipped -= *b;
            *b = 0.0;
        }
    }
    let beta_total: f64 = betas.iter().sum();
    if !(beta_total > 0.0) || !beta_total.is_finite() {
        return Err(Error::SupportMismatch);
    }
    let mixture = GaussianMixture::new(betas, components)?.normalize().map_err(|_| Error::SupportMismatch)?;
    Ok(Prediction { mixture, beta_total, clipped_mass: clipped / abs_total, fallback })
}

/// How the PSG integral `∫ N(f(x); m_j, s) N(x; m_i, Σ_i) dx` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsgIntegration {
    /// Cubature moments `(ŷ_i, P_i)` of `f` under each component, then `N(ŷ_i; m_j, s + P_i)`.
    #[default]
    MomentMatched,
    /// Cubature rule applied to the integrand `x ↦ N(f(x); m_j, s)` directly.
    Direct,
}

impl std::str::FromStr for PsgIntegration {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "moment-matched" => Ok(PsgIntegration::MomentMatched),
            "direct" => Ok(PsgIntegration::Direct),
            other => Err(format!("unknown PSG integration '{other}' (expected moment-matched or direct)")),
        }
    }
}

struct Image {
    alpha: f64,
    mean: f64,
    var: f64,
    points: [f64; 2],
}

/// PSG prediction over the decomposition lattice, extended past its region with
/// the interior weight. Active nodes lie within `w √(P_i + s)` of some image mean `ŷ_i`.
pub fn psgd_predict(
    posterior: &GaussianMixture<1>,
    decomp: &PsgDecomposition,
    model: &ScalarModel,
    k: usize,
    window: f64,
    integration: PsgIntegration,
) -> Result<Prediction> {
    let s = decomp.variance();
    let images = posterior
        .iter()
        .filter(|(a, _)| *a > 0.0)
        .map(|(alpha, g)| {
            let (m, p) = (g.mean_scalar(), g.var());
            let mut points = [0.0; 2];
            let mut i = 0;
            let (mean, var, _) = cubature_scalar(m, p, |x| {
                let y = model.f1(x, k);
                points[i] = y;
                i += 1;
                y
            })?;
            Ok(Image { alpha, mean, var, points })
        })
        .collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::SupportMismatch);
    }

    let mut ranges: Vec<(i64, i64)> = images
        .iter()
        .map(|im| {
            if window.is_infinite() {
                // The full decomposition, without lattice extension.
                return (0, decomp.rank() as i64 - 1);
            }
            let r = window * (im.var + s).sqrt();
            let range = decomp.node_range(im.mean - r, im.mean + r);
            (*range.start(), *range.end())
        })
        .filter(|(a, b)| a <= b)
        .collect();
    ranges.sort_unstable();
    let mut nodes: Vec<i64> = Vec::new();
    let mut covered = i64::MIN;
    for (a, b) in ranges {
        for n in a.max(covered.saturating_add(1))..=b {
            nodes.push(n);
        }
        covered = covered.max(b);
    }
    let fallback = nodes.is_empty();
    if fallback {
        let lead = images.iter().max_by(|a, b| a.alpha.total_cmp(&b.alpha)).expect("non-empty");
        nodes.push(((lead.mean - decomp.node(0)) / decomp.step()).round() as i64);
    }

    let omega = decomp.interior_weight();
    let mut betas = match integration {
        PsgIntegration::MomentMatched => lattice_sums(&images, &nodes, decomp, s),
        PsgIntegration::Direct => {
            let norm = 1.0 / (2.0 * std::f64::consts::PI * s).sqrt();
            nodes
                .iter()
                .map(|&n| {
                    let c = decomp.node(n);
                    let mut acc = 0.0;
                    for im in &images {
                        let mut inner = 0.0;
                        for y in im.points {
                            let d = y - c;
                            let e = 0.5 * d * d / s;
                            if e < EXPONENT_CUTOFF {
                                inner += (-e).exp();
                            }
                        }
                        acc += im.alpha * 0.5 * inner * norm;
                    }
                    acc
                })
                .collect()
        }
    };
    for b in &mut betas {
        *b *= omega;
    }
    let components = nodes.iter().map(|&n| Gaussian::scalar(decomp.node(n), s)).collect();
    finish(betas, components, fallback)
}

/// `Σ_i α_i N(node; ŷ_i, s + P_i)` for each of the sorted active `nodes`.
/// Along the lattice each Gaussian is advanced by the ratio recurrence
/// `g(c + h) = g(c) r`, `r ← r e^{−h²/v}`, outward from the node nearest `ŷ_i`.
fn lattice_sums(images: &[Image], nodes: &[i64], decomp: &PsgDecomposition, s: f64) -> Vec<f64> {
    let (first, last) = (nodes[0], nodes[nodes.len() - 1]);
    let mut slot = vec![usize::MAX; (last - first + 1) as usize];
    for (i, &n) in nodes.iter().enumerate() {
        slot[(n - first) as usize] = i;
    }
    let h = decomp.step();
    let mut sums = vec![0.0; nodes.len()];
    for im in images {
        let v = s + im.var;
        let r = (2.0 * EXPONENT_CUTOFF * v).sqrt();
        let range = decomp.node_range(im.mean - r, im.mean + r);
        let (lo, hi) = ((*range.start()).max(first), (*range.end()).min(last));
        if lo > hi {
            continue;
        }
        let centre = (((im.mean - decomp.node(0)) / h).round() as i64).clamp(lo, hi);
        let scale = im.alpha / (2.0 * std::f64::consts::PI * v).sqrt();
        let d0 = decomp.node(centre) - im.mean;
        let g0 = (-0.5 * d0 * d0 / v).exp();
        let q = (-h * h / v).exp();
        for (dir, end) in [(1.0, hi), (-1.0, lo)] {
            let mut g = g0;
            let mut ratio = (-(2.0 * dir * d0 * h + h * h) / (2.0 * v)).exp();
            let mut n = centre;
            if dir < 0.0 {
                if centre == lo {
                    continue;
                }
                g *= ratio;
                ratio *= q;
                n -= 1;
            }
            loop {
                let i = slot[(n - first) as usize];
                if i != usize::MAX {
                    sums[i] += scale * g;
                }
                if n == end {
                    break;
                }
                g *= ratio;
                ratio *= q;
                n += dir as i64;
            }
        }
    }
    sums
}
