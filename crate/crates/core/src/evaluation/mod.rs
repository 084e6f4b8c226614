//! Metrics and the Monte-Carlo benchmark harness.

pub mod bench;
pub mod metrics;
pub mod output;

pub use bench::{
    run_benchmark, BenchmarkConfig, BenchmarkReport, MetricSeries, NormalizationSummary, RunOutcome, RunRecord,
    Snapshot, SnapshotSpec, TimingSummary,
};
pub use metrics::{inaccuracy, inaccuracy_unique, rmse, Inaccuracy, UniqueSamples};
pub use output::{write_results_csv, write_runs_csv, write_snapshot_csv, write_timing_csv};
