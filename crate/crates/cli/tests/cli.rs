use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmf")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small but complete experiment: coarse FSG, rank-12 PSG, few runs.
fn write_config(dir: &Path, filters: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"
[model]
name = "ungm"
q = 0.1
r = 0.1
initial_var = 0.01

[fsg]
region = [-3.0, 3.0]
spacing_sqrt_q = 0.4
cache = "fsg.txt"

[psg]
rank = 12
cache = "psg.txt"

{filters}

[benchmark]
horizon = 4
mc_runs = 3
seed = 7
reference_particles = 2000
{extra}

[output]
dir = "out"
"#
    );
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const ALL_FILTERS: &str = r#"
[[filters]]
kind = "gmf_fsgd"

[[filters]]
kind = "gmf_psgd"

[[filters]]
kind = "pf"
particles = 200

[[filters]]
kind = "pmf"
nodes = 100
"#;

#[test]
fn decompose_writes_deterministic_caches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ALL_FILTERS, "");
    let cfg = cfg.to_str().unwrap();
    let o = gmf(&["decompose", cfg, "--kind", "psg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("M = 12"));
    let first = std::fs::read(dir.path().join("psg.txt")).unwrap();
    assert!(gmf(&["decompose", cfg, "--kind", "psg"]).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("psg.txt")).unwrap());

    let o = gmf(&["decompose", cfg, "--kind", "fsg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 6 / (0.4 √0.1) = 47.4 → 48 lattice points
    assert!(stdout(&o).contains("M = 48"), "{}", stdout(&o));
    assert!(stdout(&o).contains("minimized criterion"));
}

#[test]
fn inspect_echoes_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ALL_FILTERS, "");
    let cfg = cfg.to_str().unwrap();
    assert!(gmf(&["decompose", cfg, "--kind", "fsg"]).status.success());
    assert!(gmf(&["decompose", cfg, "--kind", "psg"]).status.success());
    let o = gmf(&["inspect", dir.path().join("fsg.txt").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Sigma_g = Q (0.1) for all terms: yes"), "{}", stdout(&o));
    let o = gmf(&["inspect", dir.path().join("psg.txt").to_str().unwrap()]);
    assert!(stdout(&o).contains("m_g = m_phi for all terms: yes"), "{}", stdout(&o));
    assert!(stdout(&o).contains("rank: 12"));
}

#[test]
fn inspect_reports_bad_lines_and_versions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ALL_FILTERS, "");
    assert!(gmf(&["decompose", cfg.to_str().unwrap(), "--kind", "psg"]).status.success());
    let path = dir.path().join("psg.txt");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let n = lines.len();
    lines[n - 3] = "1.0 2.0 oops 4.0 5.0".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let o = gmf(&["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(&format!("line {}", n - 2)), "{}", stderr(&o));

    std::fs::write(&path, text.replace("version=1", "version=9")).unwrap();
    let o = gmf(&["inspect", path.to_str().unwrap()]);
    assert!(stderr(&o).contains("version 9"), "{}", stderr(&o));
}

#[test]
fn bench_without_cache_says_what_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ALL_FILTERS, "");
    let o = gmf(&["bench", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gmf decompose"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[filters]]\nkind = \"pf\"\nparticles = 10\nsmoothing = true\n", "");
    let o = gmf(&["bench", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("smoothing"), "{}", stderr(&o));
    let cfg = write_config(dir.path(), ALL_FILTERS, "turbo = 1");
    let o = gmf(&["bench", cfg.to_str().unwrap()]);
    assert!(stderr(&o).contains("turbo"), "{}", stderr(&o));
}

#[test]
fn bench_is_deterministic_and_honours_the_filter_subset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), ALL_FILTERS, "[benchmark.snapshot]\nk = 2\nregion = [-4.0, 4.0]\npoints = 41\n");
    let cfg = cfg.to_str().unwrap();
    assert!(gmf(&["decompose", cfg, "--kind", "fsg"]).status.success());
    assert!(gmf(&["decompose", cfg, "--kind", "psg"]).status.success());
    let o = gmf(&["bench", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let first = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(first.starts_with("k,rmse_gmf_fsgd,inacc_gmf_fsgd,rmse_gmf_psgd,inacc_gmf_psgd,rmse_pf,inacc_pf,rmse_pmf"));
    assert_eq!(first.lines().count(), 5);
    let snap = std::fs::read_to_string(out.join("snapshot.csv")).unwrap();
    assert!(snap.starts_with("# k=2\nx,reference_filtering,gmf_fsgd_filtering,gmf_fsgd_predictive"), "{snap}");
    assert_eq!(snap.lines().count(), 2 + 41);
    assert!(std::fs::read_to_string(out.join("timing.csv")).unwrap().starts_with("filter,mean_step_ms,p50,p95"));

    let env_run =
        Command::new(env!("CARGO_BIN_EXE_gmf")).args(["bench", cfg]).env("GMF_WORKERS", "2").output().unwrap();
    assert!(env_run.status.success());
    assert_eq!(first, std::fs::read_to_string(out.join("results.csv")).unwrap());

    let o = gmf(&["bench", cfg, "--seed", "8"]);
    assert!(o.status.success());
    assert_ne!(first, std::fs::read_to_string(out.join("results.csv")).unwrap());

    let subset = write_config(dir.path(), "[[filters]]\nkind = \"pf\"\nparticles = 100\n", "");
    let o = gmf(&["bench", subset.to_str().unwrap(), "--mc-runs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,rmse_pf,inacc_pf");
}

#[test]
fn failing_filter_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    // A static grid far from the state support loses all mass at the first update.
    let filters = "[[filters]]\nkind = \"pmf\"\nnodes = 50\nregion = [100.0, 120.0]\n";
    let cfg = write_config(dir.path(), filters, "");
    let o = gmf(&["bench", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("pmf failed"));
}

#[test]
fn bad_worker_override_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[[filters]]\nkind = \"pf\"\nparticles = 10\n", "");
    let o = Command::new(env!("CARGO_BIN_EXE_gmf"))
        .args(["bench", cfg.to_str().unwrap()])
        .env("GMF_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("GMF_WORKERS"));
}
