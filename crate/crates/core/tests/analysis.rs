use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochred_core::analysis::{
    drift_regression_v, fokker_planck_cp1, ito_isometry_check, lifted_ensemble_density,
    lifted_oracle, lindblad_check, martingale_test, pathwise_gap, supermartingale_bound,
    terminal_variance_check, DriftConfig, FokkerPlanckConfig, Observed, Status, VonMisesCap,
};
use stochred_core::dynamics::{run_ensemble, simulate_trajectory, NoisePath, Scheme, SdeConfig};
use stochred_core::geometry::GeometryBackend;
use stochred_core::linalg::{random_hermitian, CMatrix};
use stochred_core::observables::{HermitianOperator, ObservableFunction};
use stochred_core::Error;

fn cp(n: usize) -> Arc<GeometryBackend> {
    Arc::new(GeometryBackend::projective(n).unwrap())
}

fn op(diag: &[f64]) -> HermitianOperator {
    HermitianOperator::diagonal(diag)
}

fn random_op(n: usize, seed: u64) -> HermitianOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HermitianOperator::new(random_hermitian(&mut rng, n)).unwrap()
}

fn cp2_start(b: &GeometryBackend) -> stochred_core::geometry::ChartPoint {
    b.point(0, vec![0.6, 0.2, -0.4, 0.5]).unwrap()
}

#[test]
fn zero_noise_is_a_martingale_and_meets_every_bound() {
    let b = cp(2);
    let h = ObservableFunction::linear(b.clone(), random_op(3, 1)).unwrap();
    let mut cfg = SdeConfig::new(0.0, 0.01, 5.0, 1, 200);
    cfg.early_stop = false;
    let s = run_ensemble(&h, &cp2_start(&b), &cfg, None).unwrap();
    assert_eq!(martingale_test(&s, Observed::H).status, Status::Pass);
    assert_eq!(supermartingale_bound(&s, 1.0).status, Status::Pass);
    assert_eq!(ito_isometry_check(&s).status, Status::Pass);
}

#[test]
fn commuting_square_is_a_martingale() {
    let b = cp(2);
    let hop = random_op(3, 2);
    let h = ObservableFunction::linear(b.clone(), hop.clone()).unwrap();
    let sq = HermitianOperator::new(hop.matrix() * hop.matrix()).unwrap();
    let f = ObservableFunction::linear(b.clone(), sq).unwrap();
    let cfg = SdeConfig::new(0.7, 0.01, 10.0, 3, 1000);
    let s = run_ensemble(&h, &cp2_start(&b), &cfg, Some(&f)).unwrap();
    let v = martingale_test(&s, Observed::F);
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
    let v = martingale_test(&s, Observed::H);
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
}

#[test]
fn dispersion_obeys_the_curvature_bound_on_cp2() {
    let b = cp(2);
    let h = ObservableFunction::linear(b.clone(), random_op(3, 4)).unwrap();
    let cfg = SdeConfig::new(0.6, 0.01, 20.0, 5, 1000);
    let s = run_ensemble(&h, &cp2_start(&b), &cfg, None).unwrap();
    let v = supermartingale_bound(&s, 1.0);
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
    let v = ito_isometry_check(&s);
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
    assert!(s.q_monotone && s.min_v >= 0.0);
}

#[test]
fn verdict_gating() {
    let b = cp(1);
    let h = ObservableFunction::linear(b.clone(), op(&[0.0, 1.0])).unwrap();
    let x0 = b.point(0, vec![1.0, 0.0]).unwrap();
    let small = run_ensemble(&h, &x0, &SdeConfig::new(0.5, 0.01, 1.0, 6, 50), None).unwrap();
    assert_eq!(
        martingale_test(&small, Observed::H).status,
        Status::Inconclusive
    );
    assert_eq!(
        martingale_test(&small, Observed::F).status,
        Status::NotApplicable
    );
    assert_eq!(
        supermartingale_bound(&small, 0.0).status,
        Status::NotApplicable
    );
    assert_eq!(
        supermartingale_bound(&small, -1.0).status,
        Status::NotApplicable
    );
    let inconclusive = martingale_test(&small, Observed::H);
    assert!(!inconclusive.is_failure(false) && inconclusive.is_failure(true));
}

#[test]
fn eigenstate_has_no_terminal_variance() {
    let b = cp(1);
    let h = ObservableFunction::linear(b.clone(), op(&[0.0, 1.0])).unwrap();
    let x0 = b.point(0, vec![0.0, 0.0]).unwrap();
    let s = run_ensemble(&h, &x0, &SdeConfig::new(0.5, 0.01, 2.0, 7, 200), None).unwrap();
    assert_eq!(s.unresolved, 0);
    assert_eq!(s.terminal.mean_sq_dev, 0.0);
    let v = terminal_variance_check(&s, 1.0, 1.0);
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
}

fn drift_cfg(sigma: f64, seed: u64) -> DriftConfig {
    DriftConfig {
        sigma,
        dt: 0.01,
        steps: 20,
        samples: 4000,
        master_seed: seed,
        scheme: Scheme::EulerMaruyama,
        threads: None,
    }
}

#[test]
fn dispersion_drift_matches_curvature_law() {
    let b = cp(1);
    let h = ObservableFunction::linear(b.clone(), op(&[0.0, 1.0])).unwrap();
    let starts = [
        b.point(0, vec![1.0, 0.0]).unwrap(),
        b.point(0, vec![0.0, 0.0]).unwrap(),
    ];
    let r = drift_regression_v(&h, &starts, None, &drift_cfg(0.5, 8)).unwrap();
    assert!((r.estimates[0].expected + 0.015625).abs() < 1e-12);
    assert_eq!(r.estimates[1].expected, 0.0);
    assert!(r.estimates[1].estimate.abs() < 1e-12);
    assert_eq!(r.verdict.status, Status::Pass, "{}", r.verdict.narrative);
}

#[test]
fn aligned_observable_drift_matches_curvature_law() {
    let b = cp(2);
    let hop = random_op(3, 9);
    let h = ObservableFunction::linear(b.clone(), hop).unwrap();
    let f = h.affine(2.0, -1.0).unwrap();
    let r = drift_regression_v(&h, &[cp2_start(&b)], Some(&f), &drift_cfg(0.6, 10)).unwrap();
    assert_eq!(r.verdict.status, Status::Pass, "{}", r.verdict.narrative);
}

/// For commuting but non-aligned `F`, the drift of `V^F` is `−σ² Cov(F, H)²`.
#[test]
fn commuting_observable_drift_is_covariance_squared() {
    let b = cp(2);
    let h = ObservableFunction::linear(b.clone(), op(&[0.0, 1.0, 2.0])).unwrap();
    let f = ObservableFunction::linear(b.clone(), op(&[0.0, 1.0, 4.0])).unwrap();
    let fh = ObservableFunction::linear(b.clone(), op(&[0.0, 1.0, 8.0])).unwrap();
    let x0 = cp2_start(&b);
    let sigma = 0.6;
    let cov =
        fh.expectation(&x0).unwrap() - f.expectation(&x0).unwrap() * h.expectation(&x0).unwrap();
    let law = -sigma * sigma * cov * cov;
    let r = drift_regression_v(&h, &[x0], Some(&f), &drift_cfg(sigma, 11)).unwrap();
    let e = &r.estimates[0];
    assert!(
        (e.estimate - law).abs() <= 3.0 * e.se + e.bias,
        "estimate {} ± {} (bias {}), covariance law {law}",
        e.estimate,
        e.se,
        e.bias
    );
}

#[test]
fn lifted_oracle_basics() {
    let b = cp(1);
    let hop = op(&[0.0, 1.0]);
    let h = ObservableFunction::linear(b.clone(), hop.clone()).unwrap();

    // σ = 0: pure unitary evolution.
    let x0 = b.point(0, vec![0.8, 0.3]).unwrap();
    let psi0 = b.homogeneous(&x0).swap_remove(0);
    let mut cfg = SdeConfig::new(0.0, 0.01, 2.0, 0, 1);
    cfg.early_stop = false;
    let noise = NoisePath::zero(cfg.steps(), cfg.dt);
    let lifted = lifted_oracle(&hop, &psi0, &cfg, &noise).unwrap();
    let traj = simulate_trajectory(&h, &x0, &cfg, &noise, None).unwrap();
    let gap = pathwise_gap(&b, &traj, &lifted).unwrap();
    // acos-based distance bottoms out near sqrt(machine epsilon).
    assert!(gap < 1e-6, "{gap:e}");

    // Eigenvectors are stationary.
    let e = vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)];
    let mut cfg = SdeConfig::new(0.8, 0.01, 2.0, 1, 1);
    cfg.early_stop = false;
    let noise = NoisePath::generate(1, 0, cfg.steps(), cfg.dt);
    let l = lifted_oracle(&hop, &e, &cfg, &noise).unwrap();
    assert!(l.v_series.iter().all(|&v| v < 1e-14));
    assert!(l
        .states
        .iter()
        .all(|s| s[0].norm() < 1e-12 && (s[1].norm() - 1.0).abs() < 1e-12));

    // Norm drift stays small before renormalisation.
    let l = lifted_oracle(&hop, &psi0, &cfg, &noise).unwrap();
    assert!(l.max_norm_drift < 1e-2, "{}", l.max_norm_drift);

    assert!(matches!(
        lifted_oracle(&hop, &e[..1], &cfg, &noise),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn lifted_and_chart_paths_converge_with_the_step() {
    let b = cp(1);
    let hop = op(&[0.0, 1.0]);
    let h = ObservableFunction::linear(b.clone(), hop.clone()).unwrap();
    let x0 = b.point(0, vec![1.0, 0.0]).unwrap();
    let psi0 = b.homogeneous(&x0).swap_remove(0);
    let (horizon, fine, paths) = (4.0f64, 1e-3f64, 32u64);
    let mut gaps = [0.0f64; 2];
    for k in 0..paths {
        let base = NoisePath::generate(12, k, (horizon / fine).round() as usize, fine);
        for (j, f) in [2usize, 1].into_iter().enumerate() {
            let mut cfg = SdeConfig::new(0.5, fine * f as f64, horizon, 12, 1);
            cfg.early_stop = false;
            cfg.scheme = Scheme::Milstein;
            cfg.record_stride = Some(10 / f);
            let noise = base.coarsen(f).unwrap();
            let traj = simulate_trajectory(&h, &x0, &cfg, &noise, None).unwrap();
            let lifted = lifted_oracle(&hop, &psi0, &cfg, &noise).unwrap();
            gaps[j] += pathwise_gap(&b, &traj, &lifted).unwrap() / paths as f64;
        }
    }
    assert!(gaps[1] < 0.02, "gaps {gaps:?}");
    assert!(gaps[0] / gaps[1] > 1.6, "gaps {gaps:?}");
}

#[test]
fn lindblad_degenerate_cases() {
    let hop = op(&[0.0, 1.0]);
    let b = cp(1);
    let x0 = b.point(0, vec![1.0, 0.0]).unwrap();
    let psi0 = b.homogeneous(&x0).swap_remove(0);
    let mut cfg = SdeConfig::new(0.0, 0.01, 2.0, 0, 4);
    cfg.early_stop = false;
    cfg.record_stride = Some(10);
    let (times, rho) = lifted_ensemble_density(&hop, &psi0, &cfg, None).unwrap();
    let (v, fit) = lindblad_check(&hop, 0.0, &times, &rho).unwrap();
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
    assert!(fit.c_fit.abs() < 1e-10);

    // A diagonal density matrix is a fixed point.
    let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::new(0.3, 0.0),
        Complex64::new(0.7, 0.0),
    ]));
    let times = vec![0.0, 1.0, 2.0, 3.0];
    let (v, _) = lindblad_check(&hop, 0.5, &times, &vec![diag; 4]).unwrap();
    assert_eq!(v.status, Status::Pass, "{}", v.narrative);
    assert!(lindblad_check(&hop, 0.5, &times[..2], &rho[..2]).is_err());
}

#[test]
fn fokker_planck_input_checks() {
    let h3 = op(&[0.0, 1.0, 2.0]);
    let cap = VonMisesCap {
        theta: 0.5,
        phi: 0.0,
        concentration: 10.0,
    };
    let cfg = FokkerPlanckConfig::new(0.5, vec![1.0], 10, 0);
    assert!(matches!(
        fokker_planck_cp1(&h3, &cap, &cfg),
        Err(Error::Configuration(_))
    ));
    let mut cfg = FokkerPlanckConfig::new(0.5, vec![1.0], 10, 0);
    cfg.pde_dt = Some(1.0);
    assert!(matches!(
        fokker_planck_cp1(&op(&[0.0, 1.0]), &cap, &cfg),
        Err(Error::Configuration(_))
    ));
}

#[test]
fn fokker_planck_keeps_an_eigenstate_cap_concentrated() {
    let hop = op(&[0.0, 1.0]);
    let ground = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let cap = VonMisesCap::centred_at(&hop, &ground, 50.0).unwrap();
    let mut cfg = FokkerPlanckConfig::new(0.5, vec![1.0, 4.0], 200, 13);
    cfg.n_theta = 64;
    cfg.n_phi = 64;
    let r = fokker_planck_cp1(&hop, &cap, &cfg).unwrap();
    for &(north, south) in &r.pole_mass {
        assert!(north > 0.99 && south < 1e-3, "{:?}", r.pole_mass);
    }
}
