//! Experiment file: one TOML document, validated before any computation.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use gmf_core::decomp::{Interval, VarianceRule, WeightRule};
use gmf_core::filters::{EvidenceRule, GridMode, PsgIntegration, DEFAULT_WINDOW};
use gmf_core::{ungm_model, Gaussian, ScalarModel};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelSection,
    pub fsg: Option<FsgSection>,
    pub psg: Option<PsgSection>,
    #[serde(default)]
    pub filters: Vec<FilterSection>,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub q: f64,
    pub r: f64,
    #[serde(default)]
    pub initial_mean: f64,
    pub initial_var: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsgSection {
    pub region: [f64; 2],
    /// Lattice spacing in units of `√Q`.
    pub spacing_sqrt_q: f64,
    #[serde(default = "default_weights")]
    pub weights: String,
    pub cache: PathBuf,
}

fn default_weights() -> String {
    WeightRule::default().name().to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsgSection {
    pub rank: usize,
    /// Defaults to half-width `(rank − 1)/2 · √Q`.
    pub region: Option<[f64; 2]>,
    /// Fixed `c` in `s = c · step²`; optimized when absent.
    pub variance_coefficient: Option<f64>,
    pub cache: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSection {
    GmfFsgd {
        #[serde(default = "default_window")]
        window_sigmas: f64,
        #[serde(default = "default_evidence")]
        evidence: String,
    },
    GmfPsgd {
        #[serde(default = "default_window")]
        window_sigmas: f64,
        #[serde(default = "default_evidence")]
        evidence: String,
        #[serde(default = "default_integration")]
        integration: String,
    },
    Pf {
        particles: usize,
    },
    Pmf {
        nodes: usize,
        /// `[lo, hi]` for a static grid; recentred each step when absent.
        region: Option<[f64; 2]>,
    },
}

fn default_window() -> f64 {
    DEFAULT_WINDOW
}

fn default_evidence() -> String {
    "noise".into()
}

fn default_integration() -> String {
    "moment-matched".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub horizon: usize,
    pub mc_runs: usize,
    pub seed: u64,
    pub reference_particles: usize,
    pub normalized_rmse: bool,
    pub snapshot: Option<SnapshotSection>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self { horizon: 50, mc_runs: 100, seed: 0, reference_particles: 100_000, normalized_rmse: true, snapshot: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSection {
    pub k: usize,
    pub region: [f64; 2],
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub runs_csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("results"), runs_csv: false }
    }
}

pub fn interval(r: [f64; 2], what: &str) -> Result<Interval> {
    Interval::new(r[0], r[1]).with_context(|| format!("{what}: invalid region [{}, {}]", r[0], r[1]))
}

fn positive(x: f64, what: &str) -> Result<()> {
    ensure!(x.is_finite() && x > 0.0, "{what} must be positive and finite, got {x}");
    Ok(())
}

impl ExperimentSpec {
    /// Reads and validates; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec: ExperimentSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = spec.fsg.as_mut() {
            resolve(&mut f.cache);
        }
        if let Some(p) = spec.psg.as_mut() {
            resolve(&mut p.cache);
        }
        resolve(&mut spec.output.dir);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.model.name == "ungm", "unsupported model '{}' (only ungm)", self.model.name);
        positive(self.model.q, "model.q")?;
        positive(self.model.r, "model.r")?;
        positive(self.model.initial_var, "model.initial_var")?;
        ensure!(self.model.initial_mean.is_finite(), "model.initial_mean must be finite");
        if let Some(f) = &self.fsg {
            interval(f.region, "fsg.region")?;
            positive(f.spacing_sqrt_q, "fsg.spacing_sqrt_q")?;
            self.weight_rule()?;
        }
        if let Some(p) = &self.psg {
            ensure!(p.rank >= 1, "psg.rank must be at least 1");
            if let Some(r) = p.region {
                interval(r, "psg.region")?;
            }
            if let Some(c) = p.variance_coefficient {
                positive(c, "psg.variance_coefficient")?;
            }
        }
        let mut seen = Vec::new();
        for f in &self.filters {
            let name = f.name();
            ensure!(!seen.contains(&name), "filter '{name}' listed twice");
            seen.push(name);
            match f {
                FilterSection::GmfFsgd { window_sigmas, evidence } => {
                    ensure!(self.fsg.is_some(), "filter gmf_fsgd needs an [fsg] section");
                    ensure!(*window_sigmas > 0.0, "window_sigmas must be positive");
                    parse_evidence(evidence)?;
                }
                FilterSection::GmfPsgd { window_sigmas, evidence, integration } => {
                    ensure!(self.psg.is_some(), "filter gmf_psgd needs a [psg] section");
                    ensure!(*window_sigmas > 0.0, "window_sigmas must be positive");
                    parse_evidence(evidence)?;
                    parse_integration(integration)?;
                }
                FilterSection::Pf { particles } => ensure!(*particles >= 1, "pf.particles must be at least 1"),
                FilterSection::Pmf { nodes, region } => {
                    ensure!(*nodes >= 2, "pmf.nodes must be at least 2");
                    if let Some(r) = region {
                        interval(*r, "pmf.region")?;
                    }
                }
            }
        }
        let b = &self.benchmark;
        ensure!(b.horizon >= 1, "benchmark.horizon must be at least 1");
        ensure!(b.mc_runs >= 1, "benchmark.mc_runs must be at least 1");
        ensure!(b.reference_particles >= 2, "benchmark.reference_particles must be at least 2");
        if let Some(s) = &b.snapshot {
            ensure!(s.k >= 1 && s.k <= b.horizon, "snapshot.k must lie in 1..=horizon");
            ensure!(s.points >= 2, "snapshot.points must be at least 2");
            interval(s.region, "snapshot.region")?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ScalarModel> {
        let m = &self.model;
        Ok(ungm_model(m.q, m.r, Gaussian::scalar(m.initial_mean, m.initial_var)?)?)
    }

    pub fn weight_rule(&self) -> Result<WeightRule> {
        let name = self.fsg.as_ref().map_or_else(default_weights, |f| f.weights.clone());
        name.parse().map_err(|e: String| anyhow::anyhow!("fsg.weights: {e}"))
    }

    pub fn psg_region(&self) -> Result<Interval> {
        let p = self.psg.as_ref().context("no [psg] section")?;
        match p.region {
            Some(r) => interval(r, "psg.region"),
            None => Ok(gmf_core::decomp::psg::default_region(self.model.q, p.rank)?),
        }
    }

    pub fn variance_rule(&self) -> VarianceRule {
        match self.psg.as_ref().and_then(|p| p.variance_coefficient) {
            Some(c) => VarianceRule::Fixed(c),
            None => VarianceRule::Optimized,
        }
    }
}

impl FilterSection {
    pub fn name(&self) -> &'static str {
        match self {
            FilterSection::GmfFsgd { .. } => "gmf_fsgd",
            FilterSection::GmfPsgd { .. } => "gmf_psgd",
            FilterSection::Pf { .. } => "pf",
            FilterSection::Pmf { .. } => "pmf",
        }
    }
}

pub fn parse_evidence(s: &str) -> Result<EvidenceRule> {
    s.parse().map_err(|e: String| anyhow::anyhow!(e))
}

pub fn parse_integration(s: &str) -> Result<PsgIntegration> {
    s.parse().map_err(|e: String| anyhow::anyhow!(e))
}

pub fn grid_mode(region: Option<[f64; 2]>) -> Result<GridMode> {
    match region {
        Some(r) => Ok(GridMode::Static(interval(r, "pmf.region")?)),
        None => Ok(GridMode::Recentred),
    }
}
