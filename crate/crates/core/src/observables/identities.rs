//! Pointwise residuals of the algebraic identities satisfied by observables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{covariant_hessian_from, poisson_bracket, ObservableFunction};
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, MetricTensors};
use crate::linalg::{bilinear, mat_vec_real, Tensor4};

/// Step for differencing the covariant Hessian into a third derivative.
pub const THIRD_DERIVATIVE_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `‖∇_bF ∇^b∇^aG − ∇_bG ∇^b∇^aF − ω^{ab} ∇_b(ω^{cd} ∇_cF ∇_dG)‖_g`.
    pub adler_horwitz: f64,
    /// `ω^{ab} ∇_aH ∇_bV^F`; `None` when `F` and `H` do not commute.
    pub conserved_dispersion: Option<f64>,
    /// Largest `‖∇_a∇_b∇_cX + J_b^p R_apc^q J_q^r ∇_rX‖_F` over `X ∈ {F, G, H}`.
    pub third_derivative: f64,
    /// `V^F V^G − (ω^{ab} ∇_aF ∇_bG)²`; non-negative.
    pub heisenberg_slack: f64,
}

struct Local {
    grad: Vec<f64>,
    raised: Vec<f64>,
    s: DMatrix<f64>,
}

fn local(
    obs: &ObservableFunction,
    p: &ChartPoint,
    m: &MetricTensors,
    gamma: &crate::linalg::Tensor3,
) -> Result<Local> {
    let jet = obs.jet(p, true)?;
    let s = covariant_hessian_from(&jet, gamma);
    let raised = m.raise(&jet.grad);
    Ok(Local {
        grad: jet.grad,
        raised,
        s,
    })
}

fn same_backend(obs: &[&ObservableFunction]) -> Result<()> {
    let id = obs[0].backend().id();
    if obs.iter().any(|o| o.backend().id() != id) {
        return Err(Error::InvalidInput(
            "observables live on different backends".into(),
        ));
    }
    Ok(())
}

/// `∇_b (ω^{cd} ∇_c F ∇_d G) = ω^{cd} (∇_b∇_cF ∇_dG + ∇_cF ∇_b∇_dG)`.
fn bracket_gradient(wu: &DMatrix<f64>, f: &Local, g: &Local) -> Vec<f64> {
    let wg = mat_vec_real(wu, &g.grad);
    let wtf = mat_vec_real(&wu.transpose(), &f.grad);
    let a = mat_vec_real(&f.s, &wg);
    let b = mat_vec_real(&g.s, &wtf);
    a.iter().zip(&b).map(|(x, y)| x + y).collect()
}

pub fn identity_residuals(
    f: &ObservableFunction,
    g: &ObservableFunction,
    h: &ObservableFunction,
    p: &ChartPoint,
) -> Result<ResidualReport> {
    same_backend(&[f, g, h])?;
    let backend = f.backend();
    let m = backend.metric_at(p)?;
    let gamma = backend.christoffels_at(p)?.gamma;
    let wu = m.omega_upper();
    let lf = local(f, p, &m, &gamma)?;
    let lg = local(g, p, &m, &gamma)?;
    let lh = local(h, p, &m, &gamma)?;

    // (a) vector identity with upper index a.
    let lhs_f = mat_vec_real(&m.g_inv, &mat_vec_real(&lg.s, &lf.raised));
    let lhs_g = mat_vec_real(&m.g_inv, &mat_vec_real(&lf.s, &lg.raised));
    let rhs = mat_vec_real(&wu, &bracket_gradient(&wu, &lf, &lg));
    let diff: Vec<f64> = (0..lhs_f.len())
        .map(|a| lhs_f[a] - lhs_g[a] - rhs[a])
        .collect();
    let adler_horwitz = bilinear(&m.g, &diff, &diff).max(0.0).sqrt();

    // (b) ∇_c V^F = 2 ∇_c∇_aF ∇^aF.
    let conserved_dispersion = if f.commutes_with(h, p)? {
        let dv: Vec<f64> = mat_vec_real(&lf.s, &lf.raised)
            .into_iter()
            .map(|v| 2.0 * v)
            .collect();
        Some(bilinear(&wu, &lh.grad, &dv))
    } else {
        None
    };

    let riemann = backend.riemann_at(p)?.r;
    let mut third_derivative = 0.0f64;
    for obs in [f, g, h] {
        third_derivative =
            third_derivative.max(third_derivative_residual(obs, p, &m, &gamma, &riemann)?);
    }

    let vf = bilinear(&m.g_inv, &lf.grad, &lf.grad);
    let vg = bilinear(&m.g_inv, &lg.grad, &lg.grad);
    let w = bilinear(&wu, &lf.grad, &lg.grad);
    Ok(ResidualReport {
        adler_horwitz,
        conserved_dispersion,
        third_derivative,
        heisenberg_slack: vf * vg - w * w,
    })
}

/// `‖∇_a∇_b∇_cF + J_b^p R_apc^q J_q^r ∇_rF‖_F`, the left side by central
/// differences of the covariant Hessian.
///
/// The third derivative is read with `∇_a` applied first, i.e. the tensor
/// `T_abc = ∇_c(∇_b∇_aF)`; with the outermost derivative on the left instead
/// the identity fails by an O(1) curvature term.
pub fn third_derivative_residual(
    obs: &ObservableFunction,
    p: &ChartPoint,
    m: &MetricTensors,
    gamma: &crate::linalg::Tensor3,
    riemann: &Tensor4,
) -> Result<f64> {
    let d = m.dim();
    let h = THIRD_DERIVATIVE_STEP;
    let s0 = obs.covariant_hessian(p)?;
    let grad = obs.gradient(p)?;
    let mut ds = Vec::with_capacity(d);
    for a in 0..d {
        let mut plus = p.clone();
        plus.coords[a] += h;
        let mut minus = p.clone();
        minus.coords[a] -= h;
        ds.push((obs.covariant_hessian(&plus)? - obs.covariant_hessian(&minus)?) / (2.0 * h));
    }
    // J_b^p as a matrix with row b, column p: ω_be g^{ep}.
    let jl = &m.omega * &m.g_inv;
    let w = mat_vec_real(&jl, &grad);
    let u = mat_vec_real(&m.g_inv, &w);
    let mut total = 0.0;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                // ∇_a S_bc with the outer derivative a; the curvature term below
                // swaps a and c to match the reading documented above.
                let mut t = ds[a][(b, c)];
                for e in 0..d {
                    t -= gamma.get(e, a, b) * s0[(e, c)] + gamma.get(e, a, c) * s0[(b, e)];
                }
                let mut curv = 0.0;
                for q in 0..d {
                    if jl[(b, q)] == 0.0 {
                        continue;
                    }
                    let mut y = 0.0;
                    for e in 0..d {
                        y += riemann.get(c, q, a, e) * u[e];
                    }
                    curv += jl[(b, q)] * y;
                }
                total += (t + curv).powi(2);
            }
        }
    }
    Ok(total.sqrt())
}

/// `{F,{G,K}} + {G,{K,F}} + {K,{F,G}}`.
pub fn jacobi_residual(
    f: &ObservableFunction,
    g: &ObservableFunction,
    k: &ObservableFunction,
    p: &ChartPoint,
) -> Result<f64> {
    same_backend(&[f, g, k])?;
    let backend = f.backend();
    let m = backend.metric_at(p)?;
    let gamma = backend.christoffels_at(p)?.gamma;
    let wu = m.omega_upper();
    let lf = local(f, p, &m, &gamma)?;
    let lg = local(g, p, &m, &gamma)?;
    let lk = local(k, p, &m, &gamma)?;
    // ∇{G,K} = 2 ∇(ω^{cd} ∇_cG ∇_dK).
    let outer = |x: &Local, y: &Local, z: &Local| {
        let inner: Vec<f64> = bracket_gradient(&wu, y, z)
            .into_iter()
            .map(|v| 2.0 * v)
            .collect();
        2.0 * bilinear(&wu, &x.grad, &inner)
    };
    Ok(outer(&lf, &lg, &lk) + outer(&lg, &lk, &lf) + outer(&lk, &lf, &lg))
}

/// Antisymmetry check helper: `{F, G} + {G, F}`.
pub fn antisymmetry_residual(
    f: &ObservableFunction,
    g: &ObservableFunction,
    p: &ChartPoint,
) -> Result<f64> {
    Ok(poisson_bracket(f, g, p)? + poisson_bracket(g, f, p)?)
}

/// Pass thresholds for [`identity_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityTolerances {
    pub adler_horwitz: f64,
    pub conserved_dispersion: f64,
    pub third_derivative: f64,
    pub jacobi: f64,
    /// Most negative Heisenberg slack tolerated.
    pub heisenberg: f64,
}

impl Default for IdentityTolerances {
    fn default() -> Self {
        Self {
            adler_horwitz: 1e-5,
            conserved_dispersion: 1e-7,
            third_derivative: 1e-5,
            jacobi: 1e-6,
            heisenberg: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySuiteReport {
    pub samples: usize,
    pub worst_adler_horwitz: f64,
    /// `None` when no commuting partner was available.
    pub worst_conserved_dispersion: Option<f64>,
    pub worst_third_derivative: f64,
    pub worst_jacobi: f64,
    pub min_heisenberg_slack: f64,
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Residuals at `samples` random points of `h`'s backend, each with a fresh
/// random companion `G`. The commuting partner is `f` when given and commuting,
/// otherwise `H²` (or a second moment map), so the dispersion identity is always
/// exercised.
pub fn identity_suite(
    h: &ObservableFunction,
    f: Option<&ObservableFunction>,
    samples: usize,
    radius: f64,
    seed: u64,
    tol: &IdentityTolerances,
) -> Result<IdentitySuiteReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let backend = h.backend_arc().clone();
    let partner = match f {
        Some(f) => f.clone(),
        None => match h.form() {
            super::ObservableForm::Linear(op) => {
                ObservableFunction::linear(backend.clone(), op.square())?
            }
            super::ObservableForm::Separable(ops) => ObservableFunction::separable(
                backend.clone(),
                ops.iter().map(|o| o.square()).collect(),
            )?,
            super::ObservableForm::MomentMap { weights } => ObservableFunction::moment_map(
                backend.clone(),
                weights.iter().map(|w| w * w + 1.0).collect(),
            )?,
            _ => h.affine(2.0, 1.0)?,
        },
    };
    let companion = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<ObservableFunction> {
        use super::HermitianOperator;
        use crate::linalg::random_hermitian;
        match h.form() {
            super::ObservableForm::Linear(op) => ObservableFunction::linear(
                backend.clone(),
                HermitianOperator::new(random_hermitian(rng, op.dim()))?,
            ),
            super::ObservableForm::Separable(ops) => ObservableFunction::separable(
                backend.clone(),
                ops.iter()
                    .map(|o| HermitianOperator::new(random_hermitian(rng, o.dim())))
                    .collect::<Result<_>>()?,
            ),
            super::ObservableForm::MomentMap { weights } => ObservableFunction::moment_map(
                backend.clone(),
                weights.iter().map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ),
            _ => Ok(h.affine(-1.0, 0.0)?),
        }
    };
    let mut report = IdentitySuiteReport {
        samples,
        worst_adler_horwitz: 0.0,
        worst_conserved_dispersion: None,
        worst_third_derivative: 0.0,
        worst_jacobi: 0.0,
        min_heisenberg_slack: f64::INFINITY,
        failures: Vec::new(),
        passed: true,
    };
    for i in 0..samples {
        let g = companion(&mut rng)?;
        let p = backend.sample_point_within(&mut rng, radius);
        let r = identity_residuals(&partner, &g, h, &p)?;
        let jac = jacobi_residual(&partner, &g, h, &p)?.abs();
        let mut fail = |what: &str, value: f64| {
            if report.failures.len() < 20 {
                report
                    .failures
                    .push(format!("sample {i}: {what} = {value:.3e}"));
            }
            report.passed = false;
        };
        if !(r.adler_horwitz <= tol.adler_horwitz) {
            fail("adler_horwitz", r.adler_horwitz);
        }
        if !(r.third_derivative <= tol.third_derivative) {
            fail("third_derivative", r.third_derivative);
        }
        if !(jac <= tol.jacobi) {
            fail("jacobi", jac);
        }
        if !(r.heisenberg_slack >= -tol.heisenberg) {
            fail("heisenberg_slack", r.heisenberg_slack);
        }
        if let Some(c) = r.conserved_dispersion {
            if !(c.abs() <= tol.conserved_dispersion) {
                fail("conserved_dispersion", c);
            }
            report.worst_conserved_dispersion = Some(
                report
                    .worst_conserved_dispersion
                    .unwrap_or(0.0)
                    .max(c.abs()),
            );
        }
        report.worst_adler_horwitz = report.worst_adler_horwitz.max(r.adler_horwitz);
        report.worst_third_derivative = report.worst_third_derivative.max(r.third_derivative);
        report.worst_jacobi = report.worst_jacobi.max(jac);
        report.min_heisenberg_slack = report.min_heisenberg_slack.min(r.heisenberg_slack);
    }
    Ok(report)
}
