//! Local SDE coefficients and the single-step integrator.

use num_complex::Complex64;

use super::{Scheme, BLOW_UP_MODULUS};
use crate::error::{Error, Result};
use crate::geometry::{projective, ChartPoint};
use crate::linalg::{mat_vec, mat_vec_real, unitary_propagator, CMatrix};
use crate::observables::{hamiltonian_from_parts, ObservableForm, ObservableFunction};

/// Coefficients of the coordinate SDE at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalState {
    pub h: f64,
    pub v: f64,
    /// Dispersion of each projective factor (a single entry otherwise).
    pub factor_v: Vec<f64>,
    /// `2ω^{ab}∇_bH`.
    pub hamiltonian: Vec<f64>,
    /// `−¼σ²∇^aV − ½σ²Γ^a_bc ∇^bH ∇^cH`.
    pub dissipative: Vec<f64>,
    /// `σ∇^aH`.
    pub vol: Vec<f64>,
}

impl LocalState {
    pub fn drift(&self) -> Vec<f64> {
        self.hamiltonian
            .iter()
            .zip(&self.dissipative)
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `K_H V²`: `Σ_k V_k²` on products of projective spaces, `V²` on `CP^n`.
    pub fn curvature_weighted_v2(&self) -> f64 {
        self.factor_v.iter().map(|v| v * v).sum()
    }
}

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Coefficients of one `CP^n` block, in complex arithmetic on the affine chart.
///
/// With `ψ` the lift, `N = |ψ|²`, `u = (F − ⟨F⟩)ψ` and `c_k = 2u_{α_k}/N` the
/// complex form of `∂_x F + i∂_y F`, the raised gradient is
/// `X = (N/4)(c + z (z†c))`. The connection term reduces to
/// `−½σ²Γ(X, X) = σ² X (z†X)/N` and the Hamiltonian field to `−2iX`.
fn projective_block(
    f: &CMatrix,
    chart: usize,
    block: &[f64],
    sigma: f64,
    ham: &mut [f64],
    diss: &mut [f64],
    vol: &mut [f64],
) -> (f64, f64) {
    let n = block.len() / 2;
    let psi = projective::lift(chart, block);
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let a = mat_vec(f, &psi);
    let b2 = mat_vec(f, &a);
    let mean = psi
        .iter()
        .zip(&a)
        .map(|(p, x)| p.conj() * x)
        .sum::<Complex64>()
        .re
        / norm;
    let mean2 = psi
        .iter()
        .zip(&b2)
        .map(|(p, x)| p.conj() * x)
        .sum::<Complex64>()
        .re
        / norm;
    let u: Vec<Complex64> = a.iter().zip(&psi).map(|(x, p)| x - p * mean).collect();
    let v = u.iter().map(|c| c.norm_sqr()).sum::<f64>() / norm;

    let z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::new(block[2 * k], block[2 * k + 1]))
        .collect();
    let alpha = |k: usize| if k < chart { k } else { k + 1 };
    let raise = |c: &[Complex64]| -> Vec<Complex64> {
        let zc: Complex64 = z.iter().zip(c).map(|(zj, cj)| zj.conj() * cj).sum();
        c.iter()
            .zip(&z)
            .map(|(cj, zj)| (cj + zj * zc) * (norm / 4.0))
            .collect()
    };
    let c: Vec<Complex64> = (0..n).map(|k| u[alpha(k)] * (2.0 / norm)).collect();
    let x = raise(&c);
    let cv: Vec<Complex64> = (0..n)
        .map(|k| {
            let al = alpha(k);
            (b2[al] - psi[al] * mean2 - u[al] * (2.0 * mean)) * (2.0 / norm)
        })
        .collect();
    let yv = raise(&cv);
    let zx: Complex64 = z.iter().zip(&x).map(|(zj, xj)| zj.conj() * xj).sum();
    let s2 = sigma * sigma;
    for k in 0..n {
        let h = -2.0 * I * x[k];
        let d = -0.25 * s2 * yv[k] + x[k] * zx * (s2 / norm);
        ham[2 * k] = h.re;
        ham[2 * k + 1] = h.im;
        diss[2 * k] = d.re;
        diss[2 * k + 1] = d.im;
        vol[2 * k] = sigma * x[k].re;
        vol[2 * k + 1] = sigma * x[k].im;
    }
    (mean, v)
}

fn operator_local(
    h: &ObservableFunction,
    ops: &[&crate::observables::HermitianOperator],
    p: &ChartPoint,
    sigma: f64,
) -> LocalState {
    let backend = h.backend();
    let d = p.coords.len();
    let mut state = LocalState {
        h: 0.0,
        v: 0.0,
        factor_v: Vec::with_capacity(ops.len()),
        hamiltonian: vec![0.0; d],
        dissipative: vec![0.0; d],
        vol: vec![0.0; d],
    };
    let charts = backend.factor_charts(p.chart);
    for ((f, op), c) in backend.factors().iter().zip(ops).zip(charts) {
        let r = f.offset..f.offset + 2 * f.n;
        let (mean, v) = projective_block(
            op.matrix(),
            c,
            &p.coords[r.clone()],
            sigma,
            &mut state.hamiltonian[r.clone()],
            &mut state.dissipative[r.clone()],
            &mut state.vol[r],
        );
        state.h += mean;
        state.v += v;
        state.factor_v.push(v);
    }
    state
}

/// Coefficients from the real tensors: metric, connection and covariant Hessian.
/// Works on every backend; the operator forms use the complex fast path instead.
pub fn generic_local_state(
    h: &ObservableFunction,
    p: &ChartPoint,
    sigma: f64,
) -> Result<LocalState> {
    let backend = h.backend();
    let jet = h.jet(p, true)?;
    let m = backend.metric_at(p)?;
    let conn = backend.christoffels_at(p)?;
    let x = m.raise(&jet.grad);
    let v = jet
        .grad
        .iter()
        .zip(&x)
        .map(|(g, x)| g * x)
        .sum::<f64>()
        .max(0.0);
    let s = crate::observables::covariant_hessian_from(&jet, &conn.gamma);
    let dv: Vec<f64> = mat_vec_real(&s, &x).into_iter().map(|t| 2.0 * t).collect();
    let grad_v = m.raise(&dv);
    let gxx = conn.contract(&x, &x);
    let s2 = sigma * sigma;
    Ok(LocalState {
        h: jet.value,
        v,
        factor_v: vec![v],
        hamiltonian: hamiltonian_from_parts(&m, &jet.grad),
        dissipative: grad_v
            .iter()
            .zip(&gxx)
            .map(|(a, b)| -0.25 * s2 * a - 0.5 * s2 * b)
            .collect(),
        vol: x.iter().map(|t| sigma * t).collect(),
    })
}

pub fn local_state(h: &ObservableFunction, p: &ChartPoint, sigma: f64) -> Result<LocalState> {
    match h.operators() {
        Some(ops) => {
            h.backend().validate(p)?;
            Ok(operator_local(h, &ops, p, sigma))
        }
        None => generic_local_state(h, p, sigma),
    }
}

/// Full coordinate drift `2ω^{ab}∇_bH − ¼σ²∇^aV − ½σ²Γ^a_bc∇^bH∇^cH`.
pub fn coordinate_drift(h: &ObservableFunction, p: &ChartPoint, sigma: f64) -> Result<Vec<f64>> {
    Ok(local_state(h, p, sigma)?.drift())
}

/// `σ∇^aH`.
pub fn volatility_vector(h: &ObservableFunction, p: &ChartPoint, sigma: f64) -> Result<Vec<f64>> {
    Ok(local_state(h, p, sigma)?.vol)
}

/// One-step map for fixed `(H, σ, dt, scheme)`.
#[derive(Clone, Debug)]
pub struct Integrator {
    h: ObservableFunction,
    sigma: f64,
    dt: f64,
    scheme: Scheme,
    /// `e^{−iF_k dt}` per projective factor, for operator forms.
    propagators: Option<Vec<CMatrix>>,
}

impl Integrator {
    pub fn new(h: &ObservableFunction, sigma: f64, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let propagators = h.operators().map(|ops| {
            ops.iter()
                .map(|op| unitary_propagator(op.matrix(), dt))
                .collect()
        });
        Ok(Self {
            h: h.clone(),
            sigma,
            dt,
            scheme,
            propagators,
        })
    }

    pub fn observable(&self) -> &ObservableFunction {
        &self.h
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn local(&self, p: &ChartPoint) -> Result<LocalState> {
        local_state(&self.h, p, self.sigma)
    }

    /// Advances `p` by one step with Brownian increment `dw`; `state` must be
    /// `self.local(p)`. `index` labels the step in blow-up errors.
    pub fn advance(
        &self,
        p: &ChartPoint,
        state: &LocalState,
        dw: f64,
        index: usize,
    ) -> Result<ChartPoint> {
        let dt = self.dt;
        let mut q = p.clone();
        for (k, c) in q.coords.iter_mut().enumerate() {
            *c += state.dissipative[k] * dt + state.vol[k] * dw;
        }
        if self.scheme == Scheme::Milstein && self.sigma > 0.0 {
            let bb = self.vol_derivative_along_vol(p, &state.vol)?;
            let w = 0.5 * (dw * dw - dt);
            for (c, t) in q.coords.iter_mut().zip(&bb) {
                *c += w * t;
            }
        }
        guard(&q, p, index)?;
        let mut q = self.hamiltonian_flow(q)?;
        guard(&q, p, index)?;
        self.h.backend().normalize_chart(&mut q);
        Ok(q)
    }

    /// `(b·∂)b` for `b = σ∇H` by a central difference along `b`.
    fn vol_derivative_along_vol(&self, p: &ChartPoint, b: &[f64]) -> Result<Vec<f64>> {
        let bmax = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if bmax == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let xmax = p.coords.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let e = 1e-5 * (1.0 + xmax) / bmax;
        let shifted = |s: f64| -> Result<Vec<f64>> {
            let mut q = p.clone();
            for (c, t) in q.coords.iter_mut().zip(b) {
                *c += s * t;
            }
            Ok(self.local(&q)?.vol)
        };
        let plus = shifted(e)?;
        let minus = shifted(-e)?;
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(a, m)| (a - m) / (2.0 * e))
            .collect())
    }

    /// Exact Killing flow over `dt`: unitary propagation of each homogeneous
    /// factor, or RK4 on the Hamiltonian field for custom observables.
    fn hamiltonian_flow(&self, p: ChartPoint) -> Result<ChartPoint> {
        let backend = self.h.backend();
        match &self.propagators {
            Some(us) => {
                let mut charts = backend.factor_charts(p.chart);
                let mut coords = p.coords.clone();
                for ((f, u), c) in backend.factors().iter().zip(us).zip(charts.iter_mut()) {
                    let r = f.offset..f.offset + 2 * f.n;
                    let psi = projective::lift(*c, &p.coords[r.clone()]);
                    let next = mat_vec(u, &psi);
                    let block = match projective::project(&next, *c) {
                        Ok(b) => b,
                        Err(_) => {
                            *c = projective::best_chart(&next);
                            projective::project(&next, *c)?
                        }
                    };
                    coords[r].copy_from_slice(&block);
                }
                Ok(ChartPoint {
                    backend_id: p.backend_id,
                    chart: backend.combine_charts(&charts),
                    coords,
                })
            }
            None => {
                if matches!(
                    self.h.form(),
                    ObservableForm::Linear(_) | ObservableForm::Separable(_)
                ) {
                    unreachable!("operator forms carry propagators");
                }
                let dt = self.dt;
                let field = |x: &ChartPoint| self.h.hamiltonian_field(x);
                let shift = |x: &ChartPoint, k: &[f64], s: f64| {
                    let mut y = x.clone();
                    for (c, t) in y.coords.iter_mut().zip(k) {
                        *c += s * t;
                    }
                    y
                };
                let k1 = field(&p)?;
                let k2 = field(&shift(&p, &k1, dt / 2.0))?;
                let k3 = field(&shift(&p, &k2, dt / 2.0))?;
                let k4 = field(&shift(&p, &k3, dt))?;
                let mut q = p;
                for i in 0..q.coords.len() {
                    q.coords[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                Ok(q)
            }
        }
    }
}

fn guard(q: &ChartPoint, last_valid: &ChartPoint, step: usize) -> Result<()> {
    if q.coords
        .iter()
        .all(|c| c.is_finite() && c.abs() <= BLOW_UP_MODULUS)
    {
        Ok(())
    } else {
        Err(Error::BlowUp {
            step,
            last_valid: last_valid.clone(),
        })
    }
}

/// One Euler–Maruyama step of the reduction SDE from `p`.
pub fn step(
    h: &ObservableFunction,
    p: &ChartPoint,
    dt: f64,
    dw: f64,
    sigma: f64,
) -> Result<ChartPoint> {
    let integrator = Integrator::new(h, sigma, dt, Scheme::EulerMaruyama)?;
    let state = integrator.local(p)?;
    integrator.advance(p, &state, dw, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryBackend;
    use crate::linalg::random_hermitian;
    use crate::observables::HermitianOperator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn fast_path_matches_tensor_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cases: Vec<(Arc<GeometryBackend>, ObservableFunction)> = {
            let cp2 = Arc::new(GeometryBackend::projective(2).unwrap());
            let prod = Arc::new(GeometryBackend::product(vec![1, 2]).unwrap());
            vec![
                (
                    cp2.clone(),
                    ObservableFunction::linear(
                        cp2,
                        HermitianOperator::new(random_hermitian(&mut rng, 3)).unwrap(),
                    )
                    .unwrap(),
                ),
                (
                    prod.clone(),
                    ObservableFunction::separable(
                        prod,
                        vec![
                            HermitianOperator::new(random_hermitian(&mut rng, 2)).unwrap(),
                            HermitianOperator::new(random_hermitian(&mut rng, 3)).unwrap(),
                        ],
                    )
                    .unwrap(),
                ),
            ]
        };
        for (b, h) in cases {
            for _ in 0..10 {
                let p = b.sample_point_within(&mut rng, 2.0);
                let fast = local_state(&h, &p, 0.7).unwrap();
                let slow = generic_local_state(&h, &p, 0.7).unwrap();
                assert!((fast.h - slow.h).abs() < 1e-12);
                assert!((fast.v - slow.v).abs() < 1e-12);
                for (x, y) in [
                    (&fast.hamiltonian, &slow.hamiltonian),
                    (&fast.dissipative, &slow.dissipative),
                    (&fast.vol, &slow.vol),
                ] {
                    for (a, c) in x.iter().zip(y.iter()) {
                        assert!((a - c).abs() < 1e-10 * (1.0 + c.abs()), "{a} vs {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn qubit_examples() {
        let b = Arc::new(GeometryBackend::projective(1).unwrap());
        let h = ObservableFunction::linear(b.clone(), HermitianOperator::diagonal(&[0.0, 1.0]))
            .unwrap();
        // Origin is an eigenstate and Γ vanishes there.
        let origin = b.point(0, vec![0.0, 0.0]).unwrap();
        assert!(coordinate_drift(&h, &origin, 0.5)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(volatility_vector(&h, &origin, 0.5)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        // |σX|² = σ²V = 0.25 at z = 1.
        let p = b.point(0, vec![1.0, 0.0]).unwrap();
        let vol = volatility_vector(&h, &p, 1.0).unwrap();
        let m = b.metric_at(&p).unwrap();
        assert!((crate::linalg::bilinear(&m.g, &vol, &vol) - 0.25).abs() < 1e-14);
        // σ = 0: the drift is −iΔE z.
        let drift = coordinate_drift(&h, &p, 0.0).unwrap();
        assert!(drift[0].abs() < 1e-15 && (drift[1] + 1.0).abs() < 1e-14);
    }
}
