use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use gmf_core::decomp::{
    build_fsg_with, build_psg, fsg_criterion, fsg_objective, optimize_fsg_scales, psg_relative_l2, read_cache,
    write_cache, CachedDecomposition, DecompositionKind, FsgDecomposition, PsgDecomposition,
};
use gmf_core::evaluation::{
    run_benchmark, write_results_csv, write_runs_csv, write_snapshot_csv, write_timing_csv, BenchmarkConfig,
    SnapshotSpec,
};
use gmf_core::filters::Estimator;
use gmf_core::ungm_default;

use crate::config::{self, interval, ExperimentSpec, FilterSection};

/// Process outcome besides hard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The command finished but something needs attention.
    Warning,
    /// At least one filter failed on at least one run.
    FilterFailure,
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn decompose(spec: &ExperimentSpec, kind: DecompositionKind) -> Result<Status> {
    let model = spec.model()?;
    let q = spec.model.q;
    match kind {
        DecompositionKind::Fsg => {
            let f = spec.fsg.as_ref().context("config has no [fsg] section")?;
            let raw = build_fsg_with(
                &model,
                0,
                interval(f.region, "fsg.region")?,
                f.spacing_sqrt_q * q.sqrt(),
                spec.weight_rule()?,
            )?;
            let opt = optimize_fsg_scales(&model, &raw)?;
            let d = &opt.decomposition;
            write_atomic(&f.cache, |w| Ok(write_cache(&CachedDecomposition::Fsg(d.clone()), w)?))?;
            println!("wrote {}", f.cache.display());
            println!("kind FSG, M = {}", d.len());
            println!("sigma_bar = {}, omega_bar = {}", d.scales().sigma_bar, d.scales().omega_bar);
            println!("minimized criterion J = {:e} (relative L2 {:.4})", opt.criterion, opt.relative_l2());
            if opt.at_boundary {
                eprintln!("warning: scale search ended on the boundary of its range");
                return Ok(Status::Warning);
            }
        }
        DecompositionKind::Psg => {
            let p = spec.psg.as_ref().context("config has no [psg] section")?;
            let d = build_psg(q, p.rank, spec.psg_region()?, spec.variance_rule())?;
            write_atomic(&p.cache, |w| Ok(write_cache(&CachedDecomposition::Psg(d.clone()), w)?))?;
            println!("wrote {}", p.cache.display());
            println!("kind PSG, M = {}", d.rank());
            println!("shared variance s = {} (c = {})", d.variance(), d.variance_coefficient());
            println!("reconstruction relative L2 = {:.4}", psg_relative_l2(&d, d.region(), d.step() / 4.0));
        }
    }
    Ok(Status::Ok)
}

fn load_cache(path: &Path, kind: DecompositionKind) -> Result<CachedDecomposition> {
    let flag = match kind {
        DecompositionKind::Fsg => "fsg",
        DecompositionKind::Psg => "psg",
    };
    if !path.exists() {
        bail!("decomposition cache {} not found; run `gmf decompose <config> --kind {flag}` first", path.display());
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let cache = read_cache(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    ensure!(cache.kind() == kind, "{} holds a {} decomposition, expected {kind}", path.display(), cache.kind());
    Ok(cache)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn fsg_for(spec: &ExperimentSpec) -> Result<FsgDecomposition> {
    let f = spec.fsg.as_ref().context("config has no [fsg] section")?;
    let CachedDecomposition::Fsg(d) = load_cache(&f.cache, DecompositionKind::Fsg)? else { unreachable!() };
    let region = interval(f.region, "fsg.region")?;
    let spacing = f.spacing_sqrt_q * spec.model.q.sqrt();
    let matches = close(d.q(), spec.model.q)
        && d.region() == region
        && close(d.spacing(), spacing)
        && d.weight_rule() == spec.weight_rule()?;
    ensure!(
        matches,
        "{} does not match the [fsg] section; rerun `gmf decompose <config> --kind fsg`",
        f.cache.display()
    );
    Ok(d)
}

fn psg_for(spec: &ExperimentSpec) -> Result<PsgDecomposition> {
    let p = spec.psg.as_ref().context("config has no [psg] section")?;
    let CachedDecomposition::Psg(d) = load_cache(&p.cache, DecompositionKind::Psg)? else { unreachable!() };
    let matches = d.rank() == p.rank && d.region() == spec.psg_region()? && close(d.base_q(), spec.model.q);
    ensure!(
        matches,
        "{} does not match the [psg] section; rerun `gmf decompose <config> --kind psg`",
        p.cache.display()
    );
    Ok(d)
}

pub fn estimators(spec: &ExperimentSpec) -> Result<Vec<Estimator>> {
    spec.filters
        .iter()
        .map(|f| {
            Ok(match f {
                FilterSection::GmfFsgd { window_sigmas, evidence } => Estimator::Fsgd {
                    decomp: Arc::new(fsg_for(spec)?),
                    window: *window_sigmas,
                    evidence: config::parse_evidence(evidence)?,
                },
                FilterSection::GmfPsgd { window_sigmas, evidence, integration } => Estimator::Psgd {
                    decomp: Arc::new(psg_for(spec)?),
                    window: *window_sigmas,
                    evidence: config::parse_evidence(evidence)?,
                    integration: config::parse_integration(integration)?,
                },
                FilterSection::Pf { particles } => Estimator::Pf { particles: *particles },
                FilterSection::Pmf { nodes, region } => {
                    Estimator::Pmf { nodes: *nodes, mode: config::grid_mode(*region)? }
                }
            })
        })
        .collect()
}

pub fn bench(spec: &ExperimentSpec, workers: Option<usize>) -> Result<Status> {
    ensure!(!spec.filters.is_empty(), "config lists no [[filters]]");
    let model = spec.model()?;
    let b = &spec.benchmark;
    let snapshot = match &b.snapshot {
        Some(s) => Some(SnapshotSpec { k: s.k, region: interval(s.region, "snapshot.region")?, points: s.points }),
        None => None,
    };
    let config = BenchmarkConfig {
        horizon: b.horizon,
        mc_runs: b.mc_runs,
        seed: b.seed,
        reference_pf_size: b.reference_particles,
        normalized_rmse: b.normalized_rmse,
        snapshot,
        workers,
        ..BenchmarkConfig::new(estimators(spec)?)
    };
    config.validate()?;
    let report = run_benchmark(&config, &model)?;

    let dir = &spec.output.dir;
    write_atomic(&dir.join("results.csv"), |w| Ok(write_results_csv(&report.series, w)?))?;
    write_atomic(&dir.join("timing.csv"), |w| Ok(write_timing_csv(&report.timings(), w)?))?;
    if let Some(s) = &report.snapshot {
        write_atomic(&dir.join("snapshot.csv"), |w| Ok(write_snapshot_csv(s, w)?))?;
    }
    if spec.output.runs_csv {
        write_atomic(&dir.join("runs.csv"), |w| Ok(write_runs_csv(&report, w)?))?;
    }

    let s = &report.series;
    println!("{:<10} {:>10} {:>10} {:>12} {:>8}", "filter", "rmse", "inacc", "step_ms", "failed");
    for (i, name) in s.filters.iter().enumerate() {
        let inacc = s.time_averaged_inacc(i).map_or("-".to_string(), |v| format!("{v:.4}"));
        let step = s.mean_step_ms[i].iter().sum::<f64>() / s.mean_step_ms[i].len().max(1) as f64;
        println!("{name:<10} {:>10.4} {inacc:>10} {step:>12.4} {:>8}", s.time_averaged_rmse(i), s.failures[i]);
    }
    println!("wrote {}", dir.display());
    if report.any_failure() {
        for run in &report.runs {
            for r in run.records.iter().filter(|r| r.failure.is_some()) {
                eprintln!("run {}: {} failed: {}", run.run, r.filter, r.failure.as_deref().unwrap_or(""));
            }
        }
        return Ok(Status::FilterFailure);
    }
    Ok(Status::Ok)
}

pub fn inspect(path: &Path) -> Result<Status> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let cache = read_cache(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    let terms = cache.terms();
    let (wmin, wmax) =
        terms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t.omega), b.max(t.omega)));
    println!("kind: {}", cache.kind());
    println!("M: {}", terms.len());
    println!("region: {}", cache.region());
    println!("weight range: [{wmin:e}, {wmax:e}]");
    match &cache {
        CachedDecomposition::Fsg(d) => {
            println!("spacing: {}", d.spacing());
            println!("k: {}", d.k());
            println!("sigma_bar: {}, omega_bar: {}", d.scales().sigma_bar, d.scales().omega_bar);
            println!("weight rule: {}", d.weight_rule().name());
            let all_q = terms.iter().all(|t| t.var_g == d.q());
            println!("Sigma_g = Q ({}) for all terms: {}", d.q(), if all_q { "yes" } else { "no" });
            let model = gmf_core::ungm_model(d.q(), ungm_default().r1(), ungm_default().initial().clone())?;
            let j = fsg_criterion(&model, d);
            let norm = fsg_objective(&model, d, d.scales().sigma_bar).a;
            println!("reconstruction vs UNGM transition: J = {j:e}, relative L2 {:.4}", (j / norm).sqrt());
        }
        CachedDecomposition::Psg(d) => {
            println!("rank: {}", d.rank());
            println!("step: {}", d.step());
            println!("shared variance: {} (c = {})", d.variance(), d.variance_coefficient());
            let tied = terms.iter().all(|t| t.m_g == t.m_x);
            println!("m_g = m_phi for all terms: {}", if tied { "yes" } else { "no" });
            println!("reconstruction relative L2 (coarse): {:.4}", psg_relative_l2(d, d.region(), d.step() / 2.0));
        }
    }
    Ok(Status::Ok)
}
