//! Monte-Carlo benchmark: every configured filter runs on the same simulated
//! measurements, scored against a large reference particle filter.

use rayon::prelude::*;

use super::metrics::{inaccuracy_unique, rmse, UniqueSamples};
use crate::decomp::Interval;
use crate::error::{Error, Result};
use crate::filters::{pf_step, point_estimate, Estimator, ParticleSet, Posterior};
use crate::model::{simulate, ScalarModel, SeedRecord, Trajectory};

/// RNG streams reserved per run: trajectory, reference PF, then one per filter.
pub const STREAM_STRIDE: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotSpec {
    pub k: usize,
    pub region: Interval,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub horizon: usize,
    pub mc_runs: usize,
    pub seed: u64,
    pub reference_pf_size: usize,
    pub filters: Vec<Estimator>,
    /// Average squared errors over runs (true) or sum them.
    pub normalized_rmse: bool,
    pub snapshot: Option<SnapshotSpec>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl BenchmarkConfig {
    pub fn new(filters: Vec<Estimator>) -> Self {
        Self {
            horizon: 50,
            mc_runs: 100,
            seed: 0,
            reference_pf_size: 100_000,
            filters,
            normalized_rmse: true,
            snapshot: None,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.mc_runs < 1 {
            return Err(Error::InvalidParameter("mc_runs must be at least 1".into()));
        }
        if self.reference_pf_size < 2 {
            return Err(Error::InvalidParameter("reference_pf_size must be at least 2".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::InvalidParameter("no filters configured".into()));
        }
        if self.filters.len() as u64 + 2 > STREAM_STRIDE {
            return Err(Error::InvalidParameter("too many filters".into()));
        }
        let mut names: Vec<&str> = self.filters.iter().map(|f| f.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("each filter kind may appear once".into()));
        }
        if let Some(s) = &self.snapshot {
            if s.k < 1 || s.k > self.horizon || s.points < 2 {
                return Err(Error::InvalidParameter(format!("snapshot k={} points={} out of range", s.k, s.points)));
            }
        }
        Ok(())
    }
}

/// One filter over one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub filter: &'static str,
    /// Error message when the filter failed; later steps are absent.
    pub failure: Option<String>,
    pub estimates: Vec<f64>,
    /// `NaN` where the filter has no density.
    pub inacc: Vec<f64>,
    pub step_ms: Vec<f64>,
    pub active_terms: Vec<usize>,
    pub max_sum_error: f64,
    pub min_weight: f64,
    pub max_clipped_mass: f64,
    pub fallback_steps: usize,
}

impl RunRecord {
    fn new(filter: &'static str, horizon: usize) -> Self {
        Self {
            filter,
            failure: None,
            estimates: Vec::with_capacity(horizon),
            inacc: Vec::with_capacity(horizon),
            step_ms: Vec::with_capacity(horizon),
            active_terms: Vec::with_capacity(horizon),
            max_sum_error: 0.0,
            min_weight: f64::INFINITY,
            max_clipped_mass: 0.0,
            fallback_steps: 0,
        }
    }
}

/// Filtering and predictive densities of every filter at one step of run 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub xs: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run: usize,
    pub trajectory: Trajectory<1, 1>,
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub filters: Vec<&'static str>,
    pub rmse: Vec<Vec<f64>>,
    /// Mean over runs with finite values; `None` for filters without a density.
    pub inacc: Vec<Option<Vec<f64>>>,
    pub mean_step_ms: Vec<Vec<f64>>,
    pub successes: Vec<usize>,
    pub failures: Vec<usize>,
    /// Run-step pairs with infinite INACC.
    pub inacc_infinite: Vec<usize>,
}

impl MetricSeries {
    pub fn index(&self, filter: &str) -> Option<usize> {
        self.filters.iter().position(|f| *f == filter)
    }

    pub fn time_averaged_rmse(&self, i: usize) -> f64 {
        mean_finite(&self.rmse[i])
    }

    pub fn time_averaged_inacc(&self, i: usize) -> Option<f64> {
        self.inacc[i].as_deref().map(mean_finite)
    }
}

fn mean_finite(xs: &[f64]) -> f64 {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSummary {
    pub filter: &'static str,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSummary {
    pub filter: &'static str,
    pub max_sum_error: f64,
    pub min_weight: f64,
    pub max_clipped_mass: f64,
    pub fallback_steps: usize,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub series: MetricSeries,
    pub runs: Vec<RunOutcome>,
    pub snapshot: Option<Snapshot>,
}

impl BenchmarkReport {
    pub fn any_failure(&self) -> bool {
        self.series.failures.iter().any(|&f| f > 0)
    }

    pub fn timings(&self) -> Vec<TimingSummary> {
        self.series
            .filters
            .iter()
            .map(|&filter| {
                let mut ms: Vec<f64> = self
                    .runs
                    .iter()
                    .flat_map(|r| {
                        r.records.iter().filter(|rec| rec.filter == filter).flat_map(|rec| rec.step_ms.iter())
                    })
                    .copied()
                    .collect();
                ms.sort_unstable_by(f64::total_cmp);
                let pick = |p: f64| {
                    if ms.is_empty() {
                        f64::NAN
                    } else {
                        ms[((p * (ms.len() - 1) as f64).round() as usize).min(ms.len() - 1)]
                    }
                };
                TimingSummary {
                    filter,
                    mean_ms: ms.iter().sum::<f64>() / ms.len().max(1) as f64,
                    p50_ms: pick(0.5),
                    p95_ms: pick(0.95),
                    steps: ms.len(),
                }
            })
            .collect()
    }

    pub fn normalization(&self) -> Vec<NormalizationSummary> {
        self.series
            .filters
            .iter()
            .map(|&filter| {
                let recs = self.runs.iter().flat_map(|r| r.records.iter().filter(move |rec| rec.filter == filter));
                let mut s = NormalizationSummary {
                    filter,
                    max_sum_error: 0.0,
                    min_weight: f64::INFINITY,
                    max_clipped_mass: 0.0,
                    fallback_steps: 0,
                };
                for rec in recs {
                    s.max_sum_error = s.max_sum_error.max(rec.max_sum_error);
                    s.min_weight = s.min_weight.min(rec.min_weight);
                    s.max_clipped_mass = s.max_clipped_mass.max(rec.max_clipped_mass);
                    s.fallback_steps += rec.fallback_steps;
                }
                s
            })
            .collect()
    }
}

fn run_once(config: &BenchmarkConfig, model: &ScalarModel, run: usize) -> Result<(RunOutcome, Option<Snapshot>)> {
    let base = run as u64 * STREAM_STRIDE;
    let trajectory = simulate(model, config.horizon, SeedRecord::new(config.seed, base))?;
    let mut ref_rng = SeedRecord::new(config.seed, base + 1).rng();
    let mut reference = ParticleSet::from_initial(model, config.reference_pf_size, &mut ref_rng)?;
    let mut rngs: Vec<_> =
        (0..config.filters.len()).map(|e| SeedRecord::new(config.seed, base + 2 + e as u64).rng()).collect();
    let mut records: Vec<RunRecord> = config.filters.iter().map(|f| RunRecord::new(f.name(), config.horizon)).collect();
    let mut states = Vec::with_capacity(config.filters.len());
    for (e, f) in config.filters.iter().enumerate() {
        match f.init(model, &mut rngs[e]) {
            Ok(s) => states.push(Some(s)),
            Err(err) => {
                records[e].failure = Some(err.to_string());
                states.push(None);
            }
        }
    }
    let snapshot_spec = config.snapshot.filter(|_| run == 0);
    let mut snapshot = None;

    for k in 1..=config.horizon {
        let z = trajectory.z(k)[0];
        reference = pf_step(&reference, z, model, k, &mut ref_rng)?;
        let unique = UniqueSamples::new(&reference.samples);
        let take_snapshot = snapshot_spec.filter(|s| s.k == k);
        let mut snap_columns = Vec::new();
        let xs = take_snapshot.map(|s| s.region.even_lattice(s.points - 1));
        if let Some(xs) = &xs {
            snap_columns
                .push(("reference_filtering".to_string(), Posterior::Particles(reference.clone()).density_on(xs)));
        }
        for (e, f) in config.filters.iter().enumerate() {
            let Some(state) = states[e].as_mut() else { continue };
            let rec = &mut records[e];
            if let Err(err) = f.step(state, z, model, &mut rngs[e]) {
                log::warn!("{} failed in run {run} at k={k}: {err}", f.name());
                rec.failure = Some(format!("k={k}: {err}"));
                states[e] = None;
                continue;
            }
            let d = &state.diagnostics;
            rec.estimates.push(point_estimate(state));
            rec.step_ms.push(d.step_duration.as_secs_f64() * 1e3);
            rec.active_terms.push(d.active_terms);
            rec.max_sum_error = rec.max_sum_error.max(d.predict_sum_error).max(d.update_sum_error);
            rec.min_weight = rec.min_weight.min(d.min_weight);
            rec.max_clipped_mass = rec.max_clipped_mass.max(d.clipped_mass);
            rec.fallback_steps += d.fallback as usize;
            let inacc = match state.posterior.logpdf_batch(&unique.values) {
                Some(lp) => inaccuracy_unique(&unique, &lp).value,
                None => f64::NAN,
            };
            rec.inacc.push(inacc);
            if let Some(xs) = &xs {
                snap_columns.push((format!("{}_filtering", f.name()), state.posterior.density_on(xs)));
                let pred =
                    state.predictive.as_ref().map(|p| p.density_on(xs)).unwrap_or_else(|| vec![f64::NAN; xs.len()]);
                snap_columns.push((format!("{}_predictive", f.name()), pred));
            }
        }
        if let (Some(s), Some(xs)) = (take_snapshot, xs) {
            snapshot = Some(Snapshot { k: s.k, xs, columns: snap_columns });
        }
    }
    Ok((RunOutcome { run, trajectory, records }, snapshot))
}

/// Runs the benchmark; deterministic given the configuration (timings aside).
pub fn run_benchmark(config: &BenchmarkConfig, model: &ScalarModel) -> Result<BenchmarkReport> {
    config.validate()?;
    let go = || (0..config.mc_runs).into_par_iter().map(|run| run_once(config, model, run)).collect::<Vec<_>>();
    let outcomes = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?
            .install(go),
        None => go(),
    };
    let mut runs = Vec::with_capacity(config.mc_runs);
    let mut snapshot = None;
    for o in outcomes {
        let (run, snap) = o?;
        if snap.is_some() {
            snapshot = snap;
        }
        runs.push(run);
    }
    let series = aggregate(config, &runs);
    Ok(BenchmarkReport { series, runs, snapshot })
}

fn aggregate(config: &BenchmarkConfig, runs: &[RunOutcome]) -> MetricSeries {
    let h = config.horizon;
    let mut series = MetricSeries {
        filters: config.filters.iter().map(|f| f.name()).collect(),
        rmse: Vec::new(),
        inacc: Vec::new(),
        mean_step_ms: Vec::new(),
        successes: Vec::new(),
        failures: Vec::new(),
        inacc_infinite: Vec::new(),
    };
    for e in 0..config.filters.len() {
        let ok: Vec<(&RunOutcome, &RunRecord)> =
            runs.iter().map(|r| (r, &r.records[e])).filter(|(_, rec)| rec.failure.is_none()).collect();
        let truths: Vec<Vec<f64>> =
            ok.iter().map(|(r, _)| r.trajectory.states[1..].iter().map(|x| x[0]).collect()).collect();
        let estimates: Vec<Vec<f64>> = ok.iter().map(|(_, rec)| rec.estimates.clone()).collect();
        series.rmse.push(if ok.is_empty() {
            vec![f64::NAN; h]
        } else {
            rmse(&truths, &estimates, config.normalized_rmse)
        });
        let has_density = ok.iter().any(|(_, rec)| rec.inacc.iter().any(|v| !v.is_nan()));
        let mut infinite = 0;
        let inacc = has_density.then(|| {
            (0..h)
                .map(|k| {
                    let vals: Vec<f64> = ok.iter().map(|(_, rec)| rec.inacc[k]).collect();
                    infinite += vals.iter().filter(|v| v.is_infinite()).count();
                    mean_finite(&vals)
                })
                .collect()
        });
        series.inacc.push(inacc);
        series.inacc_infinite.push(infinite);
        series.mean_step_ms.push(
            (0..h)
                .map(|k| {
                    let v: Vec<f64> = runs.iter().filter_map(|r| r.records[e].step_ms.get(k).copied()).collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                })
                .collect(),
        );
        series.successes.push(ok.len());
        series.failures.push(runs.len() - ok.len());
    }
    series
}
