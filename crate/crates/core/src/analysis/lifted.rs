//! The reduction diffusion lifted to state vectors, and its ensemble density
//! matrix.
//!
//! On unit vectors `ψ`, with `A = H − ⟨H⟩_ψ`,
//!
//! ```text
//! dψ = [−iH − (σ²/8) A²] ψ dt + (σ/2) A ψ dW
//! ```
//!
//! projects onto the chart diffusion, preserves `|ψ|` in the continuum, and its
//! ensemble average `ρ̄ = E[ψψ†]` obeys
//! `dρ̄/dt = −i[H, ρ̄] − (σ²/8)[H, [H, ρ̄]]` (see `docs/lifted.md`).
//! Steps use the same splitting as the chart integrator: dissipative drift and
//! noise (Euler–Maruyama or Milstein), then `e^{−iH dt}`, then renormalisation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::TestVerdict;
use crate::dynamics::{map_indexed, NoisePath, Scheme, SdeConfig, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{projective, GeometryBackend};
use crate::linalg::{commutator, mat_vec, unitary_propagator, CMatrix};
use crate::observables::HermitianOperator;

/// Allowed `| |ψ| − 1 |` after renormalisation.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Relative agreement required between fitted and derived Lindblad constants.
pub const LINDBLAD_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftedTrajectory {
    pub times: Vec<f64>,
    /// Unit state vectors at the records.
    pub states: Vec<Vec<Complex64>>,
    pub h_series: Vec<f64>,
    pub v_series: Vec<f64>,
    /// Largest `| |ψ|² − 1 |` seen before renormalisation.
    pub max_norm_drift: f64,
}

/// `(σ²/8)`: coefficient of the double commutator in the averaged dynamics.
pub fn lindblad_constant(sigma: f64) -> f64 {
    sigma * sigma / 8.0
}

struct Lifted {
    h: CMatrix,
    u: CMatrix,
    sigma: f64,
    dt: f64,
    scheme: Scheme,
}

impl Lifted {
    fn new(h: &HermitianOperator, sigma: f64, dt: f64, scheme: Scheme) -> Self {
        Self {
            h: h.matrix().clone(),
            u: unitary_propagator(h.matrix(), dt),
            sigma,
            dt,
            scheme,
        }
    }

    fn mean(&self, psi: &[Complex64]) -> (f64, Vec<Complex64>) {
        let a = mat_vec(&self.h, psi);
        let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        let m = psi
            .iter()
            .zip(&a)
            .map(|(p, x)| p.conj() * x)
            .sum::<Complex64>()
            .re
            / n;
        (m, a)
    }

    /// `(H − m) w`.
    fn shifted(&self, m: f64, w: &[Complex64]) -> Vec<Complex64> {
        mat_vec(&self.h, w)
            .iter()
            .zip(w)
            .map(|(a, b)| a - b * m)
            .collect()
    }

    fn step(&self, psi: &[Complex64], dw: f64) -> (Vec<Complex64>, f64) {
        let (m, a) = self.mean(psi);
        let u: Vec<Complex64> = a.iter().zip(psi).map(|(x, p)| x - p * m).collect();
        let au = self.shifted(m, &u);
        let s = self.sigma;
        let mut next: Vec<Complex64> = psi
            .iter()
            .zip(&u)
            .zip(&au)
            .map(|((p, ui), aui)| p - aui * (s * s / 8.0 * self.dt) + ui * (0.5 * s * dw))
            .collect();
        if self.scheme == Scheme::Milstein && s > 0.0 {
            // b(ψ) = (σ/2)(H − ⟨H⟩)ψ; (b·∂)b = (σ/2)[(H − m) b − δm[b] ψ].
            let b: Vec<Complex64> = u.iter().map(|x| x * (0.5 * s)).collect();
            let ab = self.shifted(m, &b);
            let n: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
            let dm = 2.0
                * psi
                    .iter()
                    .zip(&ab)
                    .map(|(p, x)| p.conj() * x)
                    .sum::<Complex64>()
                    .re
                / n;
            let w = 0.5 * (dw * dw - self.dt);
            for ((x, abi), p) in next.iter_mut().zip(&ab).zip(psi) {
                *x += (abi - p * dm) * (0.5 * s * w);
            }
        }
        let next = mat_vec(&self.u, &next);
        let n2: f64 = next.iter().map(|c| c.norm_sqr()).sum();
        (next, n2)
    }
}

fn normalize(psi: &[Complex64]) -> Vec<Complex64> {
    let n = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    psi.iter().map(|c| c / n).collect()
}

/// Integrates the lifted diffusion from `psi0` under `noise` over the whole
/// horizon (no early stop), recording on `config`'s grid.
pub fn lifted_oracle(
    h: &HermitianOperator,
    psi0: &[Complex64],
    config: &SdeConfig,
    noise: &NoisePath,
) -> Result<LiftedTrajectory> {
    config.validate()?;
    if psi0.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: psi0.len(),
        });
    }
    let steps = config.steps();
    if noise.len() != steps || (noise.dt - config.dt).abs() > 1e-15 * config.dt {
        return Err(Error::Configuration(format!(
            "noise path ({} steps of {}) does not match the horizon ({steps} steps of {})",
            noise.len(),
            noise.dt,
            config.dt
        )));
    }
    let n0: f64 = psi0.iter().map(|c| c.norm_sqr()).sum();
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(Error::InvalidInput(
            "initial vector must be non-zero".into(),
        ));
    }
    let lifted = Lifted::new(h, config.sigma, config.dt, config.scheme);
    let record = config.record_steps();
    let mut out = LiftedTrajectory {
        times: record.iter().map(|&k| k as f64 * config.dt).collect(),
        states: Vec::with_capacity(record.len()),
        h_series: Vec::with_capacity(record.len()),
        v_series: Vec::with_capacity(record.len()),
        max_norm_drift: 0.0,
    };
    let push = |out: &mut LiftedTrajectory, psi: &[Complex64]| {
        let (m, a) = lifted.mean(psi);
        let m2 = a.iter().map(|c| c.norm_sqr()).sum::<f64>();
        out.states.push(psi.to_vec());
        out.h_series.push(m);
        out.v_series.push((m2 - m * m).max(0.0));
    };
    let mut psi = normalize(psi0);
    push(&mut out, &psi);
    let mut next_record = 1;
    for (k, &dw) in noise.increments.iter().enumerate() {
        let (next, n2) = lifted.step(&psi, dw);
        if !n2.is_finite() || n2 <= 0.0 {
            return Err(Error::OracleFailure(format!(
                "state vector degenerated at step {k}"
            )));
        }
        out.max_norm_drift = out.max_norm_drift.max((n2 - 1.0).abs());
        psi = normalize(&next);
        let n_after = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if (n_after - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::OracleFailure(format!(
                "norm drift {:.3e} after renormalisation at step {k}",
                (n_after - 1.0).abs()
            )));
        }
        if next_record < record.len() && record[next_record] == k + 1 {
            push(&mut out, &psi);
            next_record += 1;
        }
    }
    Ok(out)
}

/// Largest Fubini–Study distance between a recorded chart trajectory on
/// `CP^n` and the lifted trajectory at the same records.
pub fn pathwise_gap(
    backend: &GeometryBackend,
    traj: &Trajectory,
    lifted: &LiftedTrajectory,
) -> Result<f64> {
    if traj.points.len() != lifted.states.len() {
        return Err(Error::DimensionMismatch {
            expected: lifted.states.len(),
            found: traj.points.len(),
        });
    }
    Ok(traj
        .points
        .iter()
        .zip(&lifted.states)
        .map(|(p, psi)| {
            let mut lifted_p = backend.homogeneous(p);
            projective::geodesic_distance(&lifted_p.swap_remove(0), psi)
        })
        .fold(0.0, f64::max))
}

/// Ensemble mean of `ψψ†` over `config.ensemble_size` lifted trajectories, on
/// the record grid. Summation runs in trajectory order.
pub fn lifted_ensemble_density(
    h: &HermitianOperator,
    psi0: &[Complex64],
    config: &SdeConfig,
    threads: Option<usize>,
) -> Result<(Vec<f64>, Vec<CMatrix>)> {
    let steps = config.steps();
    let runs = map_indexed(config.ensemble_size, threads, |i| {
        let noise = NoisePath::generate(config.master_seed, i as u64, steps, config.dt);
        lifted_oracle(h, psi0, config, &noise).map(|t| t.states)
    })?;
    let times: Vec<f64> = config
        .record_steps()
        .iter()
        .map(|&k| k as f64 * config.dt)
        .collect();
    let d = h.dim();
    let mut rho = vec![CMatrix::zeros(d, d); times.len()];
    for run in runs {
        for (r, psi) in rho.iter_mut().zip(run?) {
            for i in 0..d {
                for j in 0..d {
                    r[(i, j)] += psi[i] * psi[j].conj();
                }
            }
        }
    }
    let n = config.ensemble_size as f64;
    for r in &mut rho {
        *r /= Complex64::new(n, 0.0);
    }
    Ok((times, rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LindbladFit {
    pub c_derived: f64,
    pub c_fit: f64,
    pub relative_error: f64,
    /// `‖R + c_fit D‖ / ‖R‖` over the grid.
    pub residual: f64,
    /// Fitted and derived decay rates of the largest off-diagonal element, when
    /// it starts non-negligible.
    pub decay_rate_fit: Option<f64>,
    pub decay_rate_derived: Option<f64>,
}

fn frob_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Fits `c` in `dρ̄/dt = −i[H, ρ̄] − c [H, [H, ρ̄]]` by least squares on the
/// integrated equation in the interaction picture, `ρ̃ = e^{iHt} ρ̄ e^{−iHt}`:
/// `ρ̃(t) − ρ̃(0) = −c ∫₀ᵗ [H, [H, ρ̃]]`.
pub fn lindblad_check(
    h: &HermitianOperator,
    sigma: f64,
    times: &[f64],
    rho: &[CMatrix],
) -> Result<(TestVerdict, LindbladFit)> {
    let name = "lindblad";
    if times.len() != rho.len() || times.len() < 3 {
        return Err(Error::InvalidInput(
            "need at least three density-matrix samples".into(),
        ));
    }
    let hm = h.matrix();
    let tilde: Vec<CMatrix> = times
        .iter()
        .zip(rho)
        .map(|(&t, r)| {
            let u = unitary_propagator(hm, t);
            u.adjoint() * r * u
        })
        .collect();
    let dd: Vec<CMatrix> = tilde
        .iter()
        .map(|r| commutator(hm, &commutator(hm, r)))
        .collect();
    let d = hm.nrows();
    let mut integral = CMatrix::zeros(d, d);
    let (mut num, mut den, mut rr) = (0.0, 0.0, 0.0);
    let mut rs = Vec::with_capacity(times.len());
    let mut ds = Vec::with_capacity(times.len());
    for i in 1..times.len() {
        integral += (&dd[i] + &dd[i - 1]) * Complex64::new(0.5 * (times[i] - times[i - 1]), 0.0);
        let r = &tilde[i] - &tilde[0];
        num += frob_inner(&integral, &r);
        den += frob_inner(&integral, &integral);
        rr += frob_inner(&r, &r);
        rs.push(r);
        ds.push(integral.clone());
    }
    let c_derived = lindblad_constant(sigma);
    let scale = h.norm().max(1.0);
    let identifiable = den > 1e-20 * scale.powi(4) * times.last().unwrap().powi(2);
    let c_fit = if identifiable { -num / den } else { 0.0 };
    let res2: f64 = rs
        .iter()
        .zip(&ds)
        .map(|(r, dmat)| {
            let e = r + dmat * Complex64::new(c_fit, 0.0);
            frob_inner(&e, &e)
        })
        .sum();
    let residual = if rr > 0.0 { (res2 / rr).sqrt() } else { 0.0 };

    // Decay of the dominant off-diagonal element, in the eigenbasis of H.
    let eig = nalgebra::SymmetricEigen::new(hm.clone());
    let in_eigenbasis = |r: &CMatrix| eig.eigenvectors.adjoint() * r * &eig.eigenvectors;
    let first = in_eigenbasis(&tilde[0]);
    let (mut bi, mut bj, mut best) = (0, 0, 0.0);
    for i in 0..d {
        for j in i + 1..d {
            if first[(i, j)].norm() > best {
                best = first[(i, j)].norm();
                (bi, bj) = (i, j);
            }
        }
    }
    let (decay_rate_fit, decay_rate_derived) = if best > 1e-3 {
        let de = eig.eigenvalues[bj] - eig.eigenvalues[bi];
        let pts: Vec<(f64, f64)> = times
            .iter()
            .zip(&tilde)
            .map(|(&t, r)| (t, in_eigenbasis(r)[(bi, bj)].norm()))
            .take_while(|(_, v)| *v > 0.1 * best)
            .collect();
        (log_slope(&pts).map(|s| -s), Some(c_derived * de * de))
    } else {
        (None, None)
    };

    let fit = LindbladFit {
        c_derived,
        c_fit,
        relative_error: if c_derived > 0.0 {
            (c_fit - c_derived).abs() / c_derived
        } else {
            c_fit.abs()
        },
        residual,
        decay_rate_fit,
        decay_rate_derived,
    };
    let verdict = if !identifiable {
        TestVerdict::judge(
            name,
            rr.sqrt(),
            1e-9 * scale,
            format!(
                "double commutator vanishes (c not identifiable); ‖ρ̃(t) − ρ̃(0)‖ = {:.3e}",
                rr.sqrt()
            ),
        )
    } else if c_derived > 0.0 {
        TestVerdict::judge(
            name,
            fit.relative_error,
            LINDBLAD_TOLERANCE,
            format!(
                "c_fit = {c_fit:.6}, derived σ²/8 = {c_derived:.6}, relative error {:.3}, residual {residual:.3}",
                fit.relative_error
            ),
        )
    } else {
        TestVerdict::judge(
            name,
            c_fit.abs(),
            1e-10,
            format!("σ = 0: c_fit = {c_fit:.3e}"),
        )
    };
    Ok((verdict, fit))
}

/// Least-squares slope of `ln y` against `t`.
fn log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stl: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
    (stt > 0.0).then(|| stl / stt)
}
