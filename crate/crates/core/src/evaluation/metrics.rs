//! Error metrics over Monte-Carlo runs.

/// Per-step RMSE over runs. `truths[l][k]` and `estimates[l][k]` index run `l`,
/// step `k`. With `normalized` the squared errors are averaged over runs,
/// otherwise summed.
pub fn rmse(truths: &[Vec<f64>], estimates: &[Vec<f64>], normalized: bool) -> Vec<f64> {
    assert_eq!(truths.len(), estimates.len(), "run counts differ");
    let Some(first) = truths.first() else { return Vec::new() };
    let horizon = first.len();
    let runs = truths.len() as f64;
    (0..horizon)
        .map(|k| {
            let sum: f64 = truths
                .iter()
                .zip(estimates)
                .map(|(t, e)| {
                    assert_eq!(t.len(), e.len(), "horizons differ");
                    (t[k] - e[k]).powi(2)
                })
                .sum();
            if normalized {
                (sum / runs).sqrt()
            } else {
                sum.sqrt()
            }
        })
        .collect()
}

/// Sorted distinct sample values with multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct UniqueSamples {
    pub values: Vec<f64>,
    pub counts: Vec<u32>,
    pub total: usize,
}

impl UniqueSamples {
    pub fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<u32> = Vec::new();
        for x in sorted {
            if values.last() == Some(&x) {
                *counts.last_mut().expect("paired") += 1;
            } else {
                values.push(x);
                counts.push(1);
            }
        }
        Self { values, counts, total: samples.len() }
    }
}

/// Empirical cross-entropy `−(1/N) Σ log p(s_i)` of a candidate density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inaccuracy {
    pub value: f64,
    pub std_error: f64,
    /// Some sample had zero candidate density; `value` is `+∞`.
    pub infinite: bool,
}

/// INACC from log-densities evaluated at the distinct samples.
pub fn inaccuracy_unique(samples: &UniqueSamples, logpdf: &[f64]) -> Inaccuracy {
    assert_eq!(samples.values.len(), logpdf.len());
    if logpdf.iter().any(|l| !l.is_finite()) {
        return Inaccuracy { value: f64::INFINITY, std_error: f64::NAN, infinite: true };
    }
    let n = samples.total as f64;
    let mean = -samples.counts.iter().zip(logpdf).map(|(&c, l)| c as f64 * l).sum::<f64>() / n;
    let var = samples.counts.iter().zip(logpdf).map(|(&c, l)| c as f64 * (-l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Inaccuracy { value: mean, std_error: (var / n).sqrt(), infinite: false }
}

/// INACC of `logpdf` against equally weighted reference samples.
pub fn inaccuracy<F: Fn(f64) -> f64>(samples: &[f64], logpdf: F) -> Inaccuracy {
    let unique = UniqueSamples::new(samples);
    let values: Vec<f64> = unique.values.iter().map(|&x| logpdf(x)).collect();
    inaccuracy_unique(&unique, &values)
}
