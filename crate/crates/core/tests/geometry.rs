use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochred_core::geometry::checks::{geometry_report, GeometryTolerances};
use stochred_core::geometry::{
    bisectional_curvature_fh, curvature_extremes, sectional_curvature_h, GeometryBackend,
    KahlerPotential, PotentialTerm,
};
use stochred_core::linalg::random_hermitian;
use stochred_core::observables::{HermitianOperator, ObservableFunction};
use stochred_core::Error;

fn backends() -> Vec<GeometryBackend> {
    let bumpy = KahlerPotential::new(
        2,
        vec![
            PotentialTerm::NormSquared { coef: 1.0 },
            PotentialTerm::QuarticNorm { coef: 0.05 },
            PotentialTerm::CoordinateLogOnePlus {
                index: 1,
                coef: 0.5,
            },
        ],
    )
    .unwrap();
    vec![
        GeometryBackend::projective(1).unwrap(),
        GeometryBackend::projective(2).unwrap(),
        GeometryBackend::projective(3).unwrap(),
        GeometryBackend::product(vec![1, 1]).unwrap(),
        GeometryBackend::product(vec![1, 2]).unwrap(),
        GeometryBackend::potential(KahlerPotential::flat(2)).unwrap(),
        GeometryBackend::potential(bumpy).unwrap(),
    ]
}

#[test]
fn kahler_invariants_hold_on_every_backend() {
    for b in backends() {
        let report = geometry_report(&b, 100, 2.5, 7, &GeometryTolerances::default()).unwrap();
        assert!(report.passed, "{}: {:?}", report.backend, report.failures);
    }
}

#[test]
fn closed_form_riemann_matches_derivative_route() {
    for n in 1..=3 {
        let b = GeometryBackend::projective(n).unwrap();
        let report =
            geometry_report(&b, 50, 2.0, 100 + n as u64, &GeometryTolerances::default()).unwrap();
        let gap = report
            .worst
            .riemann_route_gap
            .expect("projective has a second route");
        assert!(gap < 1e-6, "CP^{n}: {gap}");
    }
}

#[test]
fn flat_potential_has_zero_curvature() {
    let b = GeometryBackend::potential(KahlerPotential::flat(2)).unwrap();
    let p = b.point(0, vec![0.3, 1.2, -0.7, 0.4]).unwrap();
    assert!(b.riemann_at(&p).unwrap().r.max_abs() < 1e-12);
    assert!(b.christoffels_at(&p).unwrap().gamma.max_abs() < 1e-12);
}

#[test]
fn cp1_has_unit_gauss_curvature() {
    let b = GeometryBackend::projective(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = b.sample_point_within(&mut rng, 2.0);
        let m = b.metric_at(&p).unwrap();
        let r = b.riemann_at(&p).unwrap().r;
        // Gauss curvature K = −R_xyxy / det g under the sign convention used here.
        let k = -r.get(0, 1, 0, 1) / m.g.determinant();
        assert!((k - 1.0).abs() < 1e-12, "{k}");
    }
}

#[test]
fn sectional_curvature_is_one_on_projective_spaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 1..=3 {
        let b = Arc::new(GeometryBackend::projective(n).unwrap());
        for _ in 0..100 {
            let h = ObservableFunction::linear(
                b.clone(),
                HermitianOperator::new(random_hermitian(&mut rng, n + 1)).unwrap(),
            )
            .unwrap();
            let p = b.sample_point_within(&mut rng, 2.0);
            let k = sectional_curvature_h(&b, &p, &h.gradient(&p).unwrap()).unwrap();
            assert!((k - 1.0).abs() < 1e-8, "CP^{n}: {k}");
        }
    }
}

#[test]
fn product_sectional_curvature_depends_on_gradient_split() {
    let b = GeometryBackend::product(vec![1, 1]).unwrap();
    let p = b.point(0, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
    // g = 4I at the origin, so equal covector components give equal g-norms.
    let both = sectional_curvature_h(&b, &p, &[1.0, 0.0, 1.0, 0.0]).unwrap();
    let one = sectional_curvature_h(&b, &p, &[1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!((both - 0.5).abs() < 1e-12, "{both}");
    assert!((one - 1.0).abs() < 1e-12, "{one}");
}

#[test]
fn degenerate_gradient_is_rejected() {
    let b = GeometryBackend::projective(1).unwrap();
    let p = b.point(0, vec![0.5, 0.0]).unwrap();
    assert!(matches!(
        sectional_curvature_h(&b, &p, &[0.0, 0.0]),
        Err(Error::DegeneratePlane { .. })
    ));
    assert!(matches!(
        bisectional_curvature_fh(&b, &p, &[1.0, 0.0], &[1e-14, 0.0]),
        Err(Error::DegeneratePlane { .. })
    ));
}

#[test]
fn bisectional_curvature_on_cp2_matches_angle_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = Arc::new(GeometryBackend::projective(2).unwrap());
    for _ in 0..100 {
        let u = stochred_core::linalg::random_unitary(&mut rng, 3);
        let ev = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..3)
                .map(|_| rand::Rng::gen_range(rng, -1.0..1.0))
                .collect()
        };
        let f = HermitianOperator::new(stochred_core::linalg::with_spectrum(&u, &ev(&mut rng)))
            .unwrap();
        let h = HermitianOperator::new(stochred_core::linalg::with_spectrum(&u, &ev(&mut rng)))
            .unwrap();
        let f = ObservableFunction::linear(b.clone(), f).unwrap();
        let h = ObservableFunction::linear(b.clone(), h).unwrap();
        let p = b.sample_point_within(&mut rng, 2.0);
        let (gf, gh) = (f.gradient(&p).unwrap(), h.gradient(&p).unwrap());
        let k = bisectional_curvature_fh(&b, &p, &gf, &gh).unwrap();
        let m = b.metric_at(&p).unwrap();
        let xf = m.raise(&gf);
        let xh = m.raise(&gh);
        let dot = stochred_core::linalg::bilinear(&m.g, &xf, &xh);
        let cos2 = dot * dot
            / (stochred_core::linalg::bilinear(&m.g, &xf, &xf)
                * stochred_core::linalg::bilinear(&m.g, &xh, &xh));
        assert!(k > 0.5 - 1e-12 && k <= 1.0 + 1e-12, "{k}");
        assert!(
            (k - 0.5 * (1.0 + cos2)).abs() < 1e-8,
            "{k} vs {}",
            0.5 * (1.0 + cos2)
        );
    }
}

#[test]
fn chart_transition_examples() {
    let b = GeometryBackend::projective(1).unwrap();
    let p = b.point(0, vec![2.0, 0.0]).unwrap();
    let q = b.chart_transition(&p, 1).unwrap();
    assert!((q.coords[0] - 0.5).abs() < 1e-15 && q.coords[1].abs() < 1e-15);
    let back = b.chart_transition(&q, 0).unwrap();
    assert!((back.coords[0] - 2.0).abs() < 1e-12);

    let pole = b.point(0, vec![0.0, 0.0]).unwrap();
    assert!(matches!(
        b.chart_transition(&pole, 1),
        Err(Error::UnreachableChart { .. })
    ));
}

#[test]
fn scalars_are_chart_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = Arc::new(GeometryBackend::product(vec![1, 2]).unwrap());
    let f1 = HermitianOperator::new(random_hermitian(&mut rng, 2)).unwrap();
    let f2 = HermitianOperator::new(random_hermitian(&mut rng, 3)).unwrap();
    let h = ObservableFunction::separable(b.clone(), vec![f1, f2]).unwrap();
    for _ in 0..20 {
        let p = b.sample_point_within(&mut rng, 1.5);
        let k = sectional_curvature_h(&b, &p, &h.gradient(&p).unwrap()).unwrap();
        for target in 0..b.chart_count() {
            let Ok(q) = b.chart_transition(&p, target) else {
                continue;
            };
            let back = b.chart_transition(&q, p.chart).unwrap();
            for (x, y) in back.coords.iter().zip(&p.coords) {
                assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
            }
            if q.coords.iter().any(|c| c.abs() > 50.0) {
                continue;
            }
            assert!((h.expectation(&q).unwrap() - h.expectation(&p).unwrap()).abs() < 1e-9);
            assert!((h.dispersion(&q).unwrap() - h.dispersion(&p).unwrap()).abs() < 1e-9);
            let kq = sectional_curvature_h(&b, &q, &h.gradient(&q).unwrap()).unwrap();
            assert!((kq - k).abs() < 1e-9, "{kq} vs {k}");
        }
    }
}

#[test]
fn curvature_extremes_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cp2 = Arc::new(GeometryBackend::projective(2).unwrap());
    let h = ObservableFunction::linear(
        cp2.clone(),
        HermitianOperator::new(random_hermitian(&mut rng, 3)).unwrap(),
    )
    .unwrap();
    let e = curvature_extremes(&cp2, &h, 10, 0).unwrap();
    assert_eq!((e.kappa, e.lambda, e.analytic), (1.0, 1.0, true));

    let prod = Arc::new(GeometryBackend::product(vec![1, 1]).unwrap());
    let hs = ObservableFunction::separable(
        prod.clone(),
        vec![
            HermitianOperator::diagonal(&[0.0, 1.0]),
            HermitianOperator::diagonal(&[0.0, 1.0]),
        ],
    )
    .unwrap();
    let single = curvature_extremes(&prod, &hs, 1, 9).unwrap();
    assert_eq!(single.kappa, single.lambda);
    assert_eq!(single.samples_used, 1);

    let dense = curvature_extremes(&prod, &hs, 100_000, 11).unwrap();
    // The infimum over the manifold is exactly 1/2, so samples can only approach it from above.
    assert!(
        dense.kappa >= 0.5 - 1e-12 && dense.kappa <= 0.5 + 0.02,
        "{}",
        dense.kappa
    );
    assert!(
        dense.lambda >= 1.0 - 0.02 && dense.lambda <= 1.0 + 1e-12,
        "{}",
        dense.lambda
    );

    assert!(matches!(
        curvature_extremes(&prod, &hs, 0, 1),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn all_critical_samples_fail_estimation() {
    let b = Arc::new(GeometryBackend::product(vec![1, 1]).unwrap());
    let zero = ObservableFunction::separable(
        b.clone(),
        vec![
            HermitianOperator::diagonal(&[1.0, 1.0]),
            HermitianOperator::diagonal(&[2.0, 2.0]),
        ],
    )
    .unwrap();
    assert!(matches!(
        curvature_extremes(&b, &zero, 5, 0),
        Err(Error::EstimationFailure(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn curvatures_are_scale_invariant(
        seed in any::<u64>(),
        scale in prop::sample::select(vec![1e-3, 1e3]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = GeometryBackend::product(vec![1, 2]).unwrap();
        let p = b.sample_point_within(&mut rng, 2.0);
        let gf: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let gh: Vec<f64> = (0..6).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let scaled: Vec<f64> = gh.iter().map(|v| v * scale).collect();
        let k = sectional_curvature_h(&b, &p, &gh).unwrap();
        let ks = sectional_curvature_h(&b, &p, &scaled).unwrap();
        prop_assert!((k - ks).abs() < 1e-10);
        let kf = bisectional_curvature_fh(&b, &p, &gf, &gh).unwrap();
        let kfs = bisectional_curvature_fh(&b, &p, &gf, &scaled).unwrap();
        prop_assert!((kf - kfs).abs() < 1e-10);
        let same = bisectional_curvature_fh(&b, &p, &gh, &gh).unwrap();
        prop_assert!((same - k).abs() < 1e-12);
    }

    #[test]
    fn product_sectional_curvature_stays_in_half_one(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = GeometryBackend::product(vec![1, 1]).unwrap();
        let p = b.sample_point_within(&mut rng, 3.0);
        let g: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let k = sectional_curvature_h(&b, &p, &g).unwrap();
        prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&k));
    }
}
