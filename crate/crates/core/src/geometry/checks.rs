//! Pointwise residuals of the Kähler and curvature identities, used by the
//! `geometry-check` command and by the test suites.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    connection_from_derivatives, riemann_from_derivatives, BackendKind, ChartPoint,
    GeometryBackend, KahlerPotential,
};
use crate::error::Result;
use crate::linalg::Tensor4;

const FD_STEP: f64 = 1e-5;

/// Residuals at one point. Riemann residuals are relative to the largest component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointResiduals {
    pub metric_asymmetry: f64,
    pub min_metric_eigenvalue: f64,
    pub omega_symmetric_part: f64,
    pub j_squared_plus_identity: f64,
    pub compatibility: f64,
    pub metric_covariant_derivative: f64,
    pub j_covariant_derivative: f64,
    pub christoffel_asymmetry: f64,
    pub riemann_antisymmetry: f64,
    pub riemann_pair_symmetry: f64,
    pub first_bianchi: f64,
    /// Largest |R_abcd|.
    pub riemann_magnitude: f64,
    /// Relative gap between the backend's Riemann tensor and an independent
    /// derivative-based computation; `None` when no independent route exists.
    pub riemann_route_gap: Option<f64>,
}

/// Tolerances applied by [`PointResiduals::failures`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GeometryTolerances {
    pub algebraic: f64,
    pub finite_difference: f64,
    pub riemann: f64,
    pub route: f64,
}

impl Default for GeometryTolerances {
    fn default() -> Self {
        Self {
            algebraic: 1e-10,
            finite_difference: 1e-6,
            riemann: 1e-8,
            route: 1e-6,
        }
    }
}

impl PointResiduals {
    pub fn failures(&self, tol: &GeometryTolerances) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, value: f64, limit: f64| {
            if !(value <= limit) {
                out.push(format!("{name} = {value:.3e} exceeds {limit:.1e}"));
            }
        };
        check("metric asymmetry", self.metric_asymmetry, tol.algebraic);
        check(
            "omega symmetric part",
            self.omega_symmetric_part,
            tol.algebraic,
        );
        check("J^2 + I", self.j_squared_plus_identity, tol.algebraic);
        check("g^-1 omega - J", self.compatibility, tol.algebraic);
        check(
            "nabla g",
            self.metric_covariant_derivative,
            tol.finite_difference,
        );
        check(
            "nabla J",
            self.j_covariant_derivative,
            tol.finite_difference,
        );
        check("Christoffel asymmetry", self.christoffel_asymmetry, 0.0);
        check(
            "Riemann antisymmetry",
            self.riemann_antisymmetry,
            tol.riemann,
        );
        check(
            "Riemann pair symmetry",
            self.riemann_pair_symmetry,
            tol.riemann,
        );
        check("first Bianchi", self.first_bianchi, tol.riemann);
        if let Some(gap) = self.riemann_route_gap {
            check("Riemann route gap", gap, tol.route);
        }
        if !(self.min_metric_eigenvalue > 0.0) {
            out.push(format!(
                "metric not positive definite (min eigenvalue {:.3e})",
                self.min_metric_eigenvalue
            ));
        }
        out
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn shifted(p: &ChartPoint, c: usize, h: f64) -> ChartPoint {
    let mut q = p.clone();
    q.coords[c] += h;
    q
}

pub fn point_residuals(backend: &GeometryBackend, p: &ChartPoint) -> Result<PointResiduals> {
    let m = backend.metric_at(p)?;
    let d = m.dim();
    let gamma = backend.christoffels_at(p)?.gamma;
    let riemann = backend.riemann_at(p)?.r;

    let mut res = PointResiduals {
        metric_asymmetry: max_abs(&(&m.g - m.g.transpose())),
        min_metric_eigenvalue: m.g.clone().symmetric_eigenvalues().min(),
        omega_symmetric_part: max_abs(&(&m.omega + m.omega.transpose())),
        j_squared_plus_identity: max_abs(&(&m.j * &m.j + DMatrix::identity(d, d))),
        compatibility: max_abs(&(&m.g_inv * &m.omega - &m.j)),
        ..Default::default()
    };

    // Finite-difference derivatives of g and J along each coordinate.
    let mut dg = Vec::with_capacity(d);
    let mut dj = Vec::with_capacity(d);
    for c in 0..d {
        let plus = backend.metric_at(&shifted(p, c, FD_STEP))?;
        let minus = backend.metric_at(&shifted(p, c, -FD_STEP))?;
        dg.push((&plus.g - &minus.g) / (2.0 * FD_STEP));
        dj.push((&plus.j - &minus.j) / (2.0 * FD_STEP));
    }
    let scale = max_abs(&m.g).max(1e-300);
    for c in 0..d {
        for a in 0..d {
            for b in 0..d {
                let mut ng = dg[c][(a, b)];
                let mut nj = dj[c][(a, b)];
                for e in 0..d {
                    ng -= gamma.get(e, c, a) * m.g[(e, b)] + gamma.get(e, c, b) * m.g[(a, e)];
                    nj += gamma.get(a, c, e) * m.j[(e, b)] - gamma.get(e, c, b) * m.j[(a, e)];
                }
                res.metric_covariant_derivative =
                    res.metric_covariant_derivative.max(ng.abs() / scale);
                res.j_covariant_derivative = res.j_covariant_derivative.max(nj.abs());
                res.christoffel_asymmetry = res
                    .christoffel_asymmetry
                    .max((gamma.get(c, a, b) - gamma.get(c, b, a)).abs());
            }
        }
    }

    let mag = riemann.max_abs();
    res.riemann_magnitude = mag;
    let norm = if mag > 0.0 { mag } else { 1.0 };
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let r = riemann.get(a, b, c, e);
                    res.riemann_antisymmetry = res
                        .riemann_antisymmetry
                        .max((r + riemann.get(b, a, c, e)).abs() / norm)
                        .max((r + riemann.get(a, b, e, c)).abs() / norm);
                    res.riemann_pair_symmetry = res
                        .riemann_pair_symmetry
                        .max((r - riemann.get(c, e, a, b)).abs() / norm);
                    let bianchi = r + riemann.get(b, c, a, e) + riemann.get(c, a, b, e);
                    res.first_bianchi = res.first_bianchi.max(bianchi.abs() / norm);
                }
            }
        }
    }

    res.riemann_route_gap = independent_riemann(backend, p)?.map(|alt| {
        let gap = alt
            .data
            .iter()
            .zip(&riemann.data)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        gap / norm
    });
    Ok(res)
}

/// Riemann tensor recomputed from nested-dual derivatives of the projective
/// potential, independent of the closed form.
pub fn independent_riemann(backend: &GeometryBackend, p: &ChartPoint) -> Result<Option<Tensor4>> {
    match backend.kind() {
        BackendKind::Potential(_) => Ok(None),
        _ => {
            let d = backend.real_dimension();
            let mut r = Tensor4::zeros(d);
            for f in backend.factors() {
                let k = KahlerPotential::fubini_study(f.n);
                let x = &p.coords[f.offset..f.offset + 2 * f.n];
                let g = k.metric(x)?;
                let g_inv = g
                    .clone()
                    .try_inverse()
                    .expect("projective metric is invertible");
                let gamma = connection_from_derivatives(&g_inv, &k.metric_first_derivatives(x)?);
                let block = riemann_from_derivatives(&g, &gamma, &k.metric_second_derivatives(x)?);
                let m = 2 * f.n;
                let o = f.offset;
                for a in 0..m {
                    for b in 0..m {
                        for c in 0..m {
                            for e in 0..m {
                                r.set(o + a, o + b, o + c, o + e, block.get(a, b, c, e));
                            }
                        }
                    }
                }
            }
            Ok(Some(r))
        }
    }
}

/// Worst residuals over `samples` points drawn with `|z_i| <= radius`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryReport {
    pub backend: String,
    pub samples: usize,
    pub worst: PointResiduals,
    pub failures: Vec<String>,
    pub passed: bool,
}

pub fn geometry_report(
    backend: &GeometryBackend,
    samples: usize,
    radius: f64,
    seed: u64,
    tol: &GeometryTolerances,
) -> Result<GeometryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = PointResiduals {
        min_metric_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    let mut failures = Vec::new();
    for i in 0..samples {
        let p = backend.sample_point_within(&mut rng, radius);
        let r = point_residuals(backend, &p)?;
        for f in r.failures(tol) {
            if failures.len() < 20 {
                failures.push(format!("sample {i}: {f}"));
            }
        }
        worst.metric_asymmetry = worst.metric_asymmetry.max(r.metric_asymmetry);
        worst.min_metric_eigenvalue = worst.min_metric_eigenvalue.min(r.min_metric_eigenvalue);
        worst.omega_symmetric_part = worst.omega_symmetric_part.max(r.omega_symmetric_part);
        worst.j_squared_plus_identity =
            worst.j_squared_plus_identity.max(r.j_squared_plus_identity);
        worst.compatibility = worst.compatibility.max(r.compatibility);
        worst.metric_covariant_derivative = worst
            .metric_covariant_derivative
            .max(r.metric_covariant_derivative);
        worst.j_covariant_derivative = worst.j_covariant_derivative.max(r.j_covariant_derivative);
        worst.christoffel_asymmetry = worst.christoffel_asymmetry.max(r.christoffel_asymmetry);
        worst.riemann_antisymmetry = worst.riemann_antisymmetry.max(r.riemann_antisymmetry);
        worst.riemann_pair_symmetry = worst.riemann_pair_symmetry.max(r.riemann_pair_symmetry);
        worst.first_bianchi = worst.first_bianchi.max(r.first_bianchi);
        worst.riemann_magnitude = worst.riemann_magnitude.max(r.riemann_magnitude);
        worst.riemann_route_gap = match (worst.riemann_route_gap, r.riemann_route_gap) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
    Ok(GeometryReport {
        backend: backend.label(),
        samples,
        passed: failures.is_empty(),
        worst,
        failures,
    })
}
