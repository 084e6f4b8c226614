use std::sync::Arc;

use gmf_core::decomp::{
    build_fsg, build_psg, optimize_fsg_scales, psg::default_region, FsgDecomposition, FsgScales, Interval, VarianceRule,
};
use gmf_core::evaluation::{run_benchmark, write_results_csv, BenchmarkConfig};
use gmf_core::filters::{
    fsgd_predict, psgd_predict, Estimator, EvidenceRule, GridMode, Posterior, PsgIntegration, DEFAULT_WINDOW,
};
use gmf_core::gaussian::{normal_pdf, Vector};
use gmf_core::model::linear_gaussian;
use gmf_core::{simulate, ungm_default, Gaussian, GaussianMixture, ScalarModel, SeedRecord};

const Q: f64 = 0.1;

fn lattice(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi - lo) / h).ceil() as usize;
    (0..=n).map(|i| lo + i as f64 * h).collect()
}

fn kalman(a: f64, q: f64, r: f64, m0: f64, p0: f64, zs: &[f64]) -> Vec<(f64, f64)> {
    let (mut m, mut p) = (m0, p0);
    zs.iter()
        .map(|&z| {
            let (mp, pp) = (a * m, a * a * p + q);
            let gain = pp / (pp + r);
            m = mp + gain * (z - mp);
            p = (1.0 - gain) * pp;
            (m, p)
        })
        .collect()
}

fn mixture_moments(post: &Posterior) -> (f64, f64) {
    let Posterior::Mixture(m) = post else { panic!("expected a mixture") };
    let (mean, cov) = m.moments();
    (mean[0], cov[(0, 0)])
}

fn linear_run(est: &Estimator, model: &ScalarModel) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let traj = simulate(model, 50, SeedRecord::new(4, 0)).unwrap();
    let zs: Vec<f64> = (1..=50).map(|k| traj.z(k)[0]).collect();
    let exact = kalman(0.9, Q, Q, 0.0, model.initial().var(), &zs);
    let mut rng = SeedRecord::new(4, 1).rng();
    let mut state = est.init(model, &mut rng).unwrap();
    let got = zs
        .iter()
        .map(|&z| {
            est.step(&mut state, z, model, &mut rng).unwrap();
            mixture_moments(&state.posterior)
        })
        .collect();
    (got, exact)
}

#[test]
fn fsgd_reproduces_kalman_on_linear_model() {
    let model = linear_gaussian(0.9, Q, Q, Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
    let raw = build_fsg(&model, 0, Interval::symmetric(6.0).unwrap(), 0.05 * Q.sqrt()).unwrap();
    let opt = optimize_fsg_scales(&model, &raw).unwrap();
    let est = Estimator::Fsgd {
        decomp: Arc::new(opt.decomposition),
        window: DEFAULT_WINDOW,
        evidence: EvidenceRule::Innovation,
    };
    let (got, exact) = linear_run(&est, &model);
    for (k, ((m, p), (me, pe))) in got.iter().zip(&exact).enumerate() {
        assert!((m - me).abs() <= 0.02 * pe.sqrt(), "k={k} mean {m} vs {me}");
        assert!((p - pe).abs() <= 0.02 * pe, "k={k} var {p} vs {pe}");
    }
}

#[test]
fn psgd_reproduces_kalman_on_linear_model() {
    let model = linear_gaussian(0.9, Q, Q, Gaussian::scalar(0.0, 1.0).unwrap()).unwrap();
    let est = Estimator::Psgd {
        decomp: Arc::new(build_psg(Q, 40, default_region(Q, 40).unwrap(), VarianceRule::Optimized).unwrap()),
        window: DEFAULT_WINDOW,
        evidence: EvidenceRule::Innovation,
        integration: PsgIntegration::MomentMatched,
    };
    let (got, exact) = linear_run(&est, &model);
    for (k, ((m, p), (me, pe))) in got.iter().zip(&exact).enumerate() {
        assert!((m - me).abs() <= 0.05 * pe.sqrt(), "k={k} mean {m} vs {me}");
        assert!((p - pe).abs() <= 0.05 * pe, "k={k} var {p} vs {pe}");
    }
}

#[test]
fn pf_matches_kalman_within_standard_errors() {
    let (p0, z) = (0.5, 0.7);
    let model = linear_gaussian(0.9, Q, Q, Gaussian::scalar(0.0, p0).unwrap()).unwrap();
    let (m, p) = kalman(0.9, Q, Q, 0.0, p0, &[z])[0];
    let n = 100_000;
    let est = Estimator::Pf { particles: n };
    let mut rng = SeedRecord::new(12, 0).rng();
    let mut state = est.init(&model, &mut rng).unwrap();
    est.step(&mut state, z, &model, &mut rng).unwrap();
    let Some(Posterior::Particles(pred)) = &state.predictive else { panic!() };
    let ess = 1.0 / pred.weights.iter().map(|w| w * w).sum::<f64>();
    let se = (p * (1.0 / ess + 1.0 / n as f64)).sqrt();
    let mean = state.posterior.mean();
    assert!((mean - m).abs() <= 3.0 * se, "{mean} vs {m} (se {se})");
}

fn ungm_fsg() -> FsgDecomposition {
    build_fsg(&ungm_default(), 0, Interval::symmetric(25.0).unwrap(), 0.05 * Q.sqrt())
        .unwrap()
        .with_scales(FsgScales::new(0.075, 0.016).unwrap())
}

#[test]
fn fsgd_window_six_matches_full_sum() {
    let d = ungm_fsg();
    let post = GaussianMixture::new(
        vec![0.6, 0.4],
        vec![Gaussian::scalar(3.0, 0.2).unwrap(), Gaussian::scalar(-2.5, 0.05).unwrap()],
    )
    .unwrap();
    let near = fsgd_predict(&post, &d, DEFAULT_WINDOW).unwrap();
    let full = fsgd_predict(&post, &d, f64::INFINITY).unwrap();
    assert!(near.active_terms() < full.active_terms());
    let h = 1e-3;
    let tv: f64 = lattice(-40.0, 40.0, h)
        .iter()
        .map(|&y| {
            let v = Vector::<1>::new(y);
            (near.mixture.pdf(&v) - full.mixture.pdf(&v)).abs()
        })
        .sum::<f64>()
        * h
        / 2.0;
    assert!(tv < 1e-6, "total variation {tv:e}");
}

#[test]
fn psgd_rank_40_tracks_brute_force_prediction() {
    let model = ungm_default();
    let d = build_psg(Q, 40, default_region(Q, 40).unwrap(), VarianceRule::Optimized).unwrap();
    for (m, v, k) in [(0.0, 0.01, 0), (2.0, 0.05, 3), (-4.0, 0.1, 7)] {
        let post = GaussianMixture::single(Gaussian::scalar(m, v).unwrap());
        let pred = psgd_predict(&post, &d, &model, k, DEFAULT_WINDOW, PsgIntegration::MomentMatched).unwrap();
        let xs = lattice(m - 10.0 * f64::sqrt(v), m + 10.0 * f64::sqrt(v), 1e-3);
        let images: Vec<(f64, f64)> = xs.iter().map(|&x| (model.f1(x, k), normal_pdf(x, m, v) * 1e-3)).collect();
        let (lo, hi) = images.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (y, _)| (a.min(*y), b.max(*y)));
        let (mut err, mut norm) = (0.0, 0.0);
        for y in lattice(lo - 3.0, hi + 3.0, 0.01) {
            let exact: f64 = images.iter().map(|(fx, w)| w * normal_pdf(y, *fx, Q)).sum();
            let approx = pred.mixture.pdf(&Vector::<1>::new(y));
            err += (approx - exact).powi(2);
            norm += exact * exact;
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 0.15, "posterior N({m}, {v}) at k={k}: relative L2 {rel}");
    }
}

#[test]
fn optimized_fsg_mass_matches_region_length() {
    let model = ungm_default();
    let raw = build_fsg(&model, 0, Interval::symmetric(25.0).unwrap(), 0.05 * Q.sqrt()).unwrap();
    let d = optimize_fsg_scales(&model, &raw).unwrap().decomposition;
    // Each term integrates to ω_j over both arguments.
    let mass: f64 = d.terms().iter().map(|t| t.omega).sum();
    assert!((mass / 50.0 - 1.0).abs() < 0.05, "mass {mass}");
}

#[test]
fn benchmark_csv_is_deterministic_across_worker_counts() {
    let model = ungm_default();
    let psg = Arc::new(build_psg(Q, 20, default_region(Q, 20).unwrap(), VarianceRule::Optimized).unwrap());
    let filters = vec![
        Estimator::Psgd {
            decomp: psg,
            window: DEFAULT_WINDOW,
            evidence: EvidenceRule::NoiseDensity,
            integration: PsgIntegration::MomentMatched,
        },
        Estimator::Pf { particles: 300 },
        Estimator::Pmf { nodes: 200, mode: GridMode::Recentred },
    ];
    let csv = |workers| {
        let config = BenchmarkConfig {
            horizon: 6,
            mc_runs: 5,
            seed: 21,
            reference_pf_size: 3_000,
            workers: Some(workers),
            ..BenchmarkConfig::new(filters.clone())
        };
        let report = run_benchmark(&config, &model).unwrap();
        let mut buf = Vec::new();
        write_results_csv(&report.series, &mut buf).unwrap();
        buf
    };
    let one = csv(1);
    assert_eq!(one, csv(1));
    assert_eq!(one, csv(3));
}
