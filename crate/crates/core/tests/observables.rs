use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stochred_core::geometry::{GeometryBackend, KahlerPotential, PotentialTerm};
use stochred_core::linalg::{
    commutator, random_hermitian, random_unitary, rayleigh, with_spectrum,
};
use stochred_core::observables::identities::antisymmetry_residual;
use stochred_core::observables::{
    identity_residuals, jacobi_residual, poisson_bracket, HermitianOperator, ObservableFunction,
};

fn op(rng: &mut ChaCha8Rng, n: usize) -> HermitianOperator {
    HermitianOperator::new(random_hermitian(rng, n)).unwrap()
}

fn cp(n: usize) -> Arc<GeometryBackend> {
    Arc::new(GeometryBackend::projective(n).unwrap())
}

fn commuting_pair(rng: &mut ChaCha8Rng, n: usize) -> (HermitianOperator, HermitianOperator) {
    let u = random_unitary(rng, n);
    let mut ev = || {
        (0..n)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let a = with_spectrum(&u, &ev());
    let b = with_spectrum(&u, &ev());
    (
        HermitianOperator::new(a).unwrap(),
        HermitianOperator::new(b).unwrap(),
    )
}

#[test]
fn dispersion_is_matrix_variance_on_cp3() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = cp(3);
    for _ in 0..20 {
        let f = op(&mut rng, 4);
        let obs = ObservableFunction::linear(b.clone(), f.clone()).unwrap();
        let p = b.sample_point_within(&mut rng, 2.0);
        let psi = stochred_core::geometry::projective::lift(p.chart, &p.coords);
        let mean = rayleigh(f.matrix(), &psi);
        let var = rayleigh(&(f.matrix() * f.matrix()), &psi) - mean * mean;
        assert!((obs.dispersion(&p).unwrap() - var).abs() < 1e-9);
    }
}

#[test]
fn gradient_is_affine_covariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = cp(2);
    let f = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let g = f.affine(-2.5, 7.0).unwrap();
    let p = b.sample_point_within(&mut rng, 2.0);
    for (x, y) in f.gradient(&p).unwrap().iter().zip(g.gradient(&p).unwrap()) {
        assert!((-2.5 * x - y).abs() < 1e-12);
    }
}

#[test]
fn bracket_matches_matrix_commutator_on_cp2() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = cp(2);
    for _ in 0..20 {
        let (fm, gm) = (op(&mut rng, 3), op(&mut rng, 3));
        let f = ObservableFunction::linear(b.clone(), fm.clone()).unwrap();
        let g = ObservableFunction::linear(b.clone(), gm.clone()).unwrap();
        let p = b.sample_point_within(&mut rng, 2.0);
        let psi = stochred_core::geometry::projective::lift(p.chart, &p.coords);
        let expected = rayleigh(
            &(commutator(fm.matrix(), gm.matrix()) * Complex64::new(0.0, -1.0)),
            &psi,
        );
        assert!((poisson_bracket(&f, &g, &p).unwrap() - expected).abs() < 1e-9);
        let c = f.commutator(&g).unwrap();
        assert!((c.expectation(&p).unwrap() - expected).abs() < 1e-12);
        assert!(poisson_bracket(&f, &f, &p).unwrap().abs() < 1e-12);
    }
}

#[test]
fn commuting_operators_have_zero_bracket() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = cp(2);
    let (fm, gm) = commuting_pair(&mut rng, 3);
    let f = ObservableFunction::linear(b.clone(), fm).unwrap();
    let g = ObservableFunction::linear(b.clone(), gm).unwrap();
    for _ in 0..10 {
        let p = b.sample_point_within(&mut rng, 2.0);
        assert!(poisson_bracket(&f, &g, &p).unwrap().abs() < 1e-10);
    }
}

#[test]
fn linear_and_commutator_flows_are_killing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = cp(2);
    let f = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let g = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let c = f.commutator(&g).unwrap();
    // Same bracket, but through the generic finite-difference route.
    let fg = f.clone();
    let gg = g.clone();
    let generic =
        ObservableFunction::custom(b.clone(), Arc::new(move |p| poisson_bracket(&fg, &gg, p)));
    for _ in 0..20 {
        let p = b.sample_point_within(&mut rng, 2.0);
        assert!(f.killing_residual(&p).unwrap() < 1e-6);
        assert!(c.killing_residual(&p).unwrap() < 1e-6);
        assert!(generic.killing_residual(&p).unwrap() < 1e-6);
    }
}

#[test]
fn squared_expectation_is_not_an_observable() {
    let b = cp(1);
    let h =
        ObservableFunction::linear(b.clone(), HermitianOperator::diagonal(&[0.0, 1.0])).unwrap();
    let phi =
        ObservableFunction::custom(b.clone(), Arc::new(move |p| Ok(h.expectation(p)?.powi(2))));
    let p = b.point(0, vec![0.8, 0.3]).unwrap();
    assert!(phi.killing_residual(&p).unwrap() > 1e-3);
}

#[test]
fn separable_and_moment_map_observables_are_killing() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let prod = Arc::new(GeometryBackend::product(vec![1, 1]).unwrap());
    let h = ObservableFunction::separable(prod.clone(), vec![op(&mut rng, 2), op(&mut rng, 2)])
        .unwrap();
    let k = KahlerPotential::new(
        2,
        vec![
            PotentialTerm::NormSquared { coef: 1.0 },
            PotentialTerm::CoordinateLogOnePlus {
                index: 0,
                coef: 2.0,
            },
        ],
    )
    .unwrap();
    let pot = Arc::new(GeometryBackend::potential(k).unwrap());
    let m = ObservableFunction::moment_map(pot.clone(), vec![1.0, -0.5]).unwrap();
    for _ in 0..20 {
        let p = prod.sample_point_within(&mut rng, 2.0);
        assert!(h.killing_residual(&p).unwrap() < 1e-6);
        let q = pot.sample_point_within(&mut rng, 2.0);
        assert!(m.killing_residual(&q).unwrap() < 1e-6);
    }
}

#[test]
fn equal_arguments_make_adler_horwitz_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = cp(2);
    let f = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let h = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let p = b.sample_point_within(&mut rng, 2.0);
    let r = identity_residuals(&f, &f, &h, &p).unwrap();
    assert!(r.adler_horwitz < 1e-12, "{}", r.adler_horwitz);
}

#[test]
fn identity_suite_on_cp2_and_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cp2 = cp(2);
    let prod = Arc::new(GeometryBackend::product(vec![1, 1]).unwrap());
    for _ in 0..100 {
        let (fm, hm) = commuting_pair(&mut rng, 3);
        let f = ObservableFunction::linear(cp2.clone(), fm).unwrap();
        let h = ObservableFunction::linear(cp2.clone(), hm).unwrap();
        let g = ObservableFunction::linear(cp2.clone(), op(&mut rng, 3)).unwrap();
        let p = cp2.sample_point_within(&mut rng, 2.0);
        let r = identity_residuals(&f, &g, &h, &p).unwrap();
        assert!(r.adler_horwitz < 1e-5, "{r:?}");
        assert!(
            r.conserved_dispersion.expect("commuting").abs() < 1e-7,
            "{r:?}"
        );
        assert!(r.third_derivative < 1e-5, "{r:?}");
        assert!(r.heisenberg_slack >= -1e-10, "{r:?}");

        let (f1, h1) = commuting_pair(&mut rng, 2);
        let (f2, h2) = commuting_pair(&mut rng, 2);
        let f = ObservableFunction::separable(prod.clone(), vec![f1, f2]).unwrap();
        let h = ObservableFunction::separable(prod.clone(), vec![h1, h2]).unwrap();
        let g = ObservableFunction::separable(prod.clone(), vec![op(&mut rng, 2), op(&mut rng, 2)])
            .unwrap();
        let p = prod.sample_point_within(&mut rng, 2.0);
        let r = identity_residuals(&f, &g, &h, &p).unwrap();
        assert!(r.adler_horwitz < 1e-5, "{r:?}");
        assert!(
            r.conserved_dispersion.expect("commuting").abs() < 1e-7,
            "{r:?}"
        );
        assert!(r.third_derivative < 1e-5, "{r:?}");
        assert!(r.heisenberg_slack >= -1e-10, "{r:?}");
    }
}

#[test]
fn non_commuting_pair_marks_lemma_not_applicable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = cp(2);
    let f = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let h = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let p = b.sample_point_within(&mut rng, 2.0);
    assert!(identity_residuals(&f, &f, &h, &p)
        .unwrap()
        .conserved_dispersion
        .is_none());
}

#[test]
fn hamiltonian_flow_preserves_distances() {
    // Integrate the Killing flow of H with RK4 for unit time and compare
    // pairwise geodesic distances.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let b = cp(2);
    let h = ObservableFunction::linear(b.clone(), op(&mut rng, 3)).unwrap();
    let flow = |p: &stochred_core::geometry::ChartPoint| -> stochred_core::geometry::ChartPoint {
        let dt = 1e-3;
        let mut x = p.clone();
        for _ in 0..1000 {
            let shift = |x: &stochred_core::geometry::ChartPoint, v: &[f64], s: f64| {
                let mut y = x.clone();
                for (c, d) in y.coords.iter_mut().zip(v) {
                    *c += s * d;
                }
                y
            };
            let k1 = h.hamiltonian_field(&x).unwrap();
            let k2 = h.hamiltonian_field(&shift(&x, &k1, dt / 2.0)).unwrap();
            let k3 = h.hamiltonian_field(&shift(&x, &k2, dt / 2.0)).unwrap();
            let k4 = h.hamiltonian_field(&shift(&x, &k3, dt)).unwrap();
            for i in 0..x.coords.len() {
                x.coords[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            b.normalize_chart(&mut x);
        }
        x
    };
    for _ in 0..5 {
        let p = b.sample_point_within(&mut rng, 1.0);
        let q = b.sample_point_within(&mut rng, 1.0);
        let dist = |a: &stochred_core::geometry::ChartPoint,
                    c: &stochred_core::geometry::ChartPoint| {
            stochred_core::geometry::projective::geodesic_distance(
                &b.homogeneous(a)[0],
                &b.homogeneous(c)[0],
            )
        };
        let before = dist(&p, &q);
        let after = dist(&flow(&p), &flow(&q));
        assert!((before - after).abs() < 1e-6, "{before} vs {after}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn heisenberg_slack_is_nonnegative(seed in any::<u64>(), product in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, g, p) = if product {
            let b = Arc::new(GeometryBackend::product(vec![1, 2]).unwrap());
            let f = ObservableFunction::separable(b.clone(), vec![op(&mut rng, 2), op(&mut rng, 3)]).unwrap();
            let g = ObservableFunction::separable(b.clone(), vec![op(&mut rng, 2), op(&mut rng, 3)]).unwrap();
            let p = b.sample_point_within(&mut rng, 3.0);
            (f, g, p)
        } else {
            let b = cp(3);
            let f = ObservableFunction::linear(b.clone(), op(&mut rng, 4)).unwrap();
            let g = ObservableFunction::linear(b.clone(), op(&mut rng, 4)).unwrap();
            let p = b.sample_point_within(&mut rng, 3.0);
            (f, g, p)
        };
        let vf = f.dispersion(&p).unwrap();
        let vg = g.dispersion(&p).unwrap();
        let w = poisson_bracket(&f, &g, &p).unwrap() / 2.0;
        prop_assert!(vf * vg - w * w >= -1e-10);
    }

    #[test]
    fn bracket_is_bilinear_antisymmetric_and_jacobi(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = cp(2);
        let fm = op(&mut rng, 3);
        let gm = op(&mut rng, 3);
        let km = op(&mut rng, 3);
        let f = ObservableFunction::linear(b.clone(), fm.clone()).unwrap();
        let g = ObservableFunction::linear(b.clone(), gm.clone()).unwrap();
        let k = ObservableFunction::linear(b.clone(), km.clone()).unwrap();
        let combo = ObservableFunction::linear(
            b.clone(),
            HermitianOperator::new(fm.matrix().scale(a) + km.matrix()).unwrap(),
        ).unwrap();
        let p = b.sample_point_within(&mut rng, 2.0);
        let lhs = poisson_bracket(&combo, &g, &p).unwrap();
        let rhs = a * poisson_bracket(&f, &g, &p).unwrap() + poisson_bracket(&k, &g, &p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        prop_assert!(antisymmetry_residual(&f, &g, &p).unwrap().abs() < 1e-12);
        prop_assert!(jacobi_residual(&f, &g, &k, &p).unwrap().abs() < 1e-8);
    }

    #[test]
    fn dispersion_vanishes_exactly_with_gradient(seed in any::<u64>(), k in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = cp(2);
        let u = random_unitary(&mut rng, 3);
        let f = HermitianOperator::new(with_spectrum(&u, &[-1.0, 0.3, 2.0])).unwrap();
        let obs = ObservableFunction::linear(b.clone(), f).unwrap();
        let psi: Vec<Complex64> = u.column(k).iter().copied().collect();
        let p = b.from_homogeneous(&[psi]).unwrap();
        let grad = obs.gradient(&p).unwrap();
        prop_assert!(grad.iter().all(|g| g.abs() < 1e-10));
        prop_assert!(obs.dispersion(&p).unwrap() < 1e-10);
        let q = b.sample_point_within(&mut rng, 3.0);
        prop_assert!(obs.dispersion(&q).unwrap() >= 0.0);
    }
}

#[test]
fn hessian_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = cp(3);
    let f = ObservableFunction::linear(b.clone(), op(&mut rng, 4)).unwrap();
    let p = b.sample_point_within(&mut rng, 2.0);
    let h: DMatrix<f64> = f.hessian(&p).unwrap();
    assert!((&h - h.transpose()).abs().max() == 0.0);
}
