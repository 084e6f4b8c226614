//! CSV emission. Floats use the shortest round-trip representation so output is
//! byte-stable across runs; wall-clock timings live in their own file.

use std::io::Write;

use super::bench::{BenchmarkReport, MetricSeries, Snapshot, TimingSummary};
use crate::error::Result;

fn cell(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// `k, rmse_<f>, inacc_<f>, ...`; INACC cells are empty for filters without a density.
pub fn write_results_csv<W: Write>(series: &MetricSeries, mut out: W) -> Result<()> {
    let mut header = vec!["k".to_string()];
    for f in &series.filters {
        header.push(format!("rmse_{f}"));
        header.push(format!("inacc_{f}"));
    }
    writeln!(out, "{}", header.join(","))?;
    let horizon = series.rmse.first().map_or(0, Vec::len);
    for k in 0..horizon {
        let mut row = vec![(k + 1).to_string()];
        for (i, _) in series.filters.iter().enumerate() {
            row.push(cell(series.rmse[i][k]));
            row.push(series.inacc[i].as_ref().map_or(String::new(), |v| cell(v[k])));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(timings: &[TimingSummary], mut out: W) -> Result<()> {
    writeln!(out, "filter,mean_step_ms,p50,p95")?;
    for t in timings {
        writeln!(out, "{},{},{},{}", t.filter, t.mean_ms, t.p50_ms, t.p95_ms)?;
    }
    Ok(())
}

/// `x` followed by one density column per entry.
pub fn write_snapshot_csv<W: Write>(snapshot: &Snapshot, mut out: W) -> Result<()> {
    writeln!(out, "# k={}", snapshot.k)?;
    let names: Vec<&str> = snapshot.columns.iter().map(|(n, _)| n.as_str()).collect();
    writeln!(out, "x,{}", names.join(","))?;
    for (i, x) in snapshot.xs.iter().enumerate() {
        let row: Vec<String> = snapshot.columns.iter().map(|(_, v)| cell(v[i])).collect();
        writeln!(out, "{x},{}", row.join(","))?;
    }
    Ok(())
}

/// Per-run, per-filter, per-step dump without timings.
pub fn write_runs_csv<W: Write>(report: &BenchmarkReport, mut out: W) -> Result<()> {
    writeln!(out, "run,filter,k,x,z,estimate,inacc,active_terms,failure")?;
    for run in &report.runs {
        let t = &run.trajectory;
        for rec in &run.records {
            for (i, est) in rec.estimates.iter().enumerate() {
                let k = i + 1;
                writeln!(
                    out,
                    "{},{},{k},{},{},{est},{},{},",
                    run.run,
                    rec.filter,
                    t.states[k][0],
                    t.z(k)[0],
                    cell(rec.inacc[i]),
                    rec.active_terms[i]
                )?;
            }
            if let Some(f) = &rec.failure {
                writeln!(out, "{},{},,,,,,,\"{}\"", run.run, rec.filter, f.replace('"', "'"))?;
            }
        }
    }
    Ok(())
}
