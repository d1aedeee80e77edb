//! Fokker–Planck equation of the reduction diffusion on `CP^1`, solved on a
//! latitude–longitude grid of the Bloch sphere and compared with an ensemble.
//!
//! In Bloch angles of the energy eigenbasis (`z = tan(θ/2) e^{iφ}`), with
//! `ΔE = E₁ − E₀`, the coefficients are
//!
//! ```text
//! μ^θ = −σ²ΔE² sinθ cosθ / 8,   h^θθ = σ²ΔE² sin²θ / 4,   μ^φ = −ΔE
//! ```
//!
//! and `u = ρ sinθ` obeys `∂_t u = −∂_θ(μ^θ u) + ½ ∂²_θ(h^θθ u) − μ^φ ∂_φ u`.
//! The θ part is advanced by explicit finite volumes (zero flux through the
//! polar faces); the φ part is a rigid rotation applied exactly in Fourier
//! space. The Brownian model (`μ = 0`, `h = σ²g`) uses the same grid with the
//! φ diffusion also applied exactly per latitude.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use super::TestVerdict;
use crate::dynamics::{map_indexed, trajectory_rng, Integrator, NoisePath, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, GeometryBackend};
use crate::linalg::CMatrix;
use crate::observables::{HermitianOperator, ObservableFunction};

/// Stream offset separating initial-state sampling from the Brownian noise.
const INITIAL_STREAM_SALT: u64 = 0x005E_ED0F_1A7E;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpModel {
    /// Coefficients of the reduction diffusion.
    #[default]
    Reduction,
    /// `μ = 0`, `h = σ² g`: Brownian motion, compared against the uniform law.
    BrownianMotion,
}

/// Von Mises–Fisher density `∝ exp(k n·x)` on the Bloch sphere, centred at
/// Bloch angles `(theta, phi)` of the energy eigenbasis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VonMisesCap {
    pub theta: f64,
    pub phi: f64,
    pub concentration: f64,
}

impl VonMisesCap {
    /// Cap centred at the state `psi`, in the eigenbasis of `h`.
    pub fn centred_at(
        h: &HermitianOperator,
        psi: &[Complex64],
        concentration: f64,
    ) -> Result<Self> {
        let basis = EigenBasis::new(h)?;
        let (theta, phi) = basis.angles(psi);
        Ok(Self {
            theta,
            phi,
            concentration,
        })
    }

    fn center(&self) -> [f64; 3] {
        unit(self.theta, self.phi)
    }

    /// Unnormalised density at a unit vector.
    fn density(&self, x: [f64; 3]) -> f64 {
        let c = self.center();
        // exp(k(n·x − 1)) avoids overflow for sharp caps.
        (self.concentration * (c[0] * x[0] + c[1] * x[1] + c[2] * x[2] - 1.0)).exp()
    }

    /// Exact sampler (Wood's method on S²).
    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        let k = self.concentration;
        let xi: f64 = rng.gen();
        let w = if k > 1e-9 {
            1.0 + (xi + (1.0 - xi) * (-2.0 * k).exp()).ln() / k
        } else {
            2.0 * xi - 1.0
        };
        let w = w.clamp(-1.0, 1.0);
        let psi: f64 = rng.gen::<f64>() * 2.0 * PI;
        let s = (1.0 - w * w).max(0.0).sqrt();
        // Orthonormal frame around the centre.
        let c = self.center();
        let e1 = unit(self.theta + PI / 2.0, self.phi);
        let e2 = cross(c, e1);
        let x = [
            w * c[0] + s * (psi.cos() * e1[0] + psi.sin() * e2[0]),
            w * c[1] + s * (psi.cos() * e1[1] + psi.sin() * e2[1]),
            w * c[2] + s * (psi.cos() * e1[2] + psi.sin() * e2[2]),
        ];
        let theta = x[2].clamp(-1.0, 1.0).acos();
        let phi = x[1].atan2(x[0]).rem_euclid(2.0 * PI);
        (theta, phi)
    }
}

fn unit(theta: f64, phi: f64) -> [f64; 3] {
    [
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    ]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FokkerPlanckConfig {
    pub sigma: f64,
    pub n_theta: usize,
    pub n_phi: usize,
    pub checkpoints: Vec<f64>,
    /// PDE step; `None` picks the largest stable step below `cfl`.
    pub pde_dt: Option<f64>,
    /// Bound on `dt · (largest explicit decay rate)`.
    pub cfl: f64,
    pub model: FpModel,
    pub ensemble_size: usize,
    pub sde_dt: f64,
    pub scheme: Scheme,
    pub master_seed: u64,
    /// Equal-area bands in `cos θ` and equal sectors in `φ` for the comparison.
    pub bins_theta: usize,
    pub bins_phi: usize,
    pub tv_threshold: f64,
    pub threads: Option<usize>,
}

impl FokkerPlanckConfig {
    pub fn new(sigma: f64, checkpoints: Vec<f64>, ensemble_size: usize, master_seed: u64) -> Self {
        Self {
            sigma,
            n_theta: 128,
            n_phi: 256,
            checkpoints,
            pde_dt: None,
            cfl: 0.4,
            model: FpModel::Reduction,
            ensemble_size,
            sde_dt: 0.01,
            scheme: Scheme::EulerMaruyama,
            master_seed,
            bins_theta: 6,
            bins_phi: 4,
            tv_threshold: 0.05,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FokkerPlanckReport {
    pub verdict: TestVerdict,
    pub checkpoints: Vec<f64>,
    pub tv: Vec<f64>,
    /// Bin masses, band-major (`θ` band × `φ` sector).
    pub pde_bins: Vec<Vec<Vec<f64>>>,
    pub reference_bins: Vec<Vec<Vec<f64>>>,
    /// PDE mass in the polar bands `(θ near 0, θ near π)` at each checkpoint.
    pub pole_mass: Vec<(f64, f64)>,
    pub pde_dt: f64,
}

/// Eigenbasis of a 2×2 Hermitian operator, ascending.
struct EigenBasis {
    e: [f64; 2],
    v: CMatrix,
}

impl EigenBasis {
    fn new(h: &HermitianOperator) -> Result<Self> {
        if h.dim() != 2 {
            return Err(Error::Configuration(format!(
                "the Fokker–Planck check needs CP^1 (a 2×2 operator), got dimension {}",
                h.dim()
            )));
        }
        let eig = nalgebra::SymmetricEigen::new(h.matrix().clone());
        let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let mut v = CMatrix::zeros(2, 2);
        v.set_column(0, &eig.eigenvectors.column(lo));
        v.set_column(1, &eig.eigenvectors.column(hi));
        Ok(Self {
            e: [eig.eigenvalues[lo], eig.eigenvalues[hi]],
            v,
        })
    }

    fn angles(&self, psi: &[Complex64]) -> (f64, f64) {
        let a0: Complex64 = (0..2).map(|i| self.v[(i, 0)].conj() * psi[i]).sum();
        let a1: Complex64 = (0..2).map(|i| self.v[(i, 1)].conj() * psi[i]).sum();
        let theta = 2.0 * a1.norm().atan2(a0.norm());
        let phi = (a1.arg() - a0.arg()).rem_euclid(2.0 * PI);
        (theta, phi)
    }

    fn state(&self, theta: f64, phi: f64) -> Vec<Complex64> {
        let c0 = Complex64::new((theta / 2.0).cos(), 0.0);
        let c1 = Complex64::from_polar((theta / 2.0).sin(), phi);
        (0..2)
            .map(|i| self.v[(i, 0)] * c0 + self.v[(i, 1)] * c1)
            .collect()
    }
}

/// Probability masses on an `n_theta × n_phi` latitude–longitude grid.
struct SphereGrid {
    nt: usize,
    np: usize,
    dth: f64,
    /// `u[i * np + j]`: mass of cell `(i, j)`.
    u: Vec<f64>,
}

impl SphereGrid {
    fn theta(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dth
    }

    fn from_cap(nt: usize, np: usize, cap: &VonMisesCap) -> Self {
        let dth = PI / nt as f64;
        let dph = 2.0 * PI / np as f64;
        // Midpoint rule on a 4×4 sub-grid per cell, then exact normalisation.
        let sub = 4;
        let mut u = vec![0.0; nt * np];
        for i in 0..nt {
            for j in 0..np {
                let mut m = 0.0;
                for a in 0..sub {
                    let th = (i as f64 + (a as f64 + 0.5) / sub as f64) * dth;
                    for b in 0..sub {
                        let ph = (j as f64 + (b as f64 + 0.5) / sub as f64) * dph;
                        m += cap.density(unit(th, ph)) * th.sin();
                    }
                }
                u[i * np + j] = m;
            }
        }
        let total: f64 = u.iter().sum();
        u.iter_mut().for_each(|x| *x /= total);
        Self { nt, np, dth, u }
    }

    /// Largest explicit decay rate of the θ operator, times `dt`.
    fn stiffness(&self, model: FpModel, sigma: f64, de: f64) -> f64 {
        let d2 = self.dth * self.dth;
        (0..self.nt)
            .map(|i| match model {
                FpModel::Reduction => {
                    let h = sigma * sigma * de * de * self.theta(i).sin().powi(2) / 4.0;
                    h / d2
                }
                FpModel::BrownianMotion => {
                    let s = self.theta(i).sin();
                    let up = (self.theta(i) - self.dth / 2.0).sin();
                    let dn = (self.theta(i) + self.dth / 2.0).sin();
                    0.5 * sigma * sigma * (up + dn) / (s * d2)
                }
            })
            .fold(0.0, f64::max)
    }

    /// One explicit finite-volume step of the θ part on every longitude.
    fn theta_step(&mut self, model: FpModel, sigma: f64, de: f64, dt: f64) {
        let (nt, np, dth) = (self.nt, self.np, self.dth);
        let s2 = sigma * sigma;
        let sin_c: Vec<f64> = (0..nt).map(|i| self.theta(i).sin()).collect();
        // Face i + ½ between cells i and i + 1.
        let faces: Vec<(f64, f64)> = (0..nt.saturating_sub(1))
            .map(|i| {
                let tf = (i + 1) as f64 * dth;
                (tf.sin(), tf.cos())
            })
            .collect();
        let mut flux = vec![0.0; nt + 1];
        let mut next = self.u.clone();
        for j in 0..np {
            // q = u / dθ: coordinate density along θ within the sector.
            let q = |i: usize| self.u[i * np + j] / dth;
            for (f, &(sf, cf)) in faces.iter().enumerate() {
                let (a, b) = (f, f + 1);
                flux[f + 1] = match model {
                    FpModel::Reduction => {
                        let mu = -s2 * de * de * sf * cf / 8.0;
                        let ha = s2 * de * de * sin_c[a] * sin_c[a] / 4.0;
                        let hb = s2 * de * de * sin_c[b] * sin_c[b] / 4.0;
                        mu * 0.5 * (q(a) + q(b)) - 0.5 * (hb * q(b) - ha * q(a)) / dth
                    }
                    FpModel::BrownianMotion => {
                        let ra = q(a) / sin_c[a];
                        let rb = q(b) / sin_c[b];
                        -0.5 * s2 * sf * (rb - ra) / dth
                    }
                };
            }
            flux[0] = 0.0;
            flux[nt] = 0.0;
            for i in 0..nt {
                next[i * np + j] += dt * (flux[i] - flux[i + 1]);
            }
        }
        self.u = next;
    }

    /// Applies `mode m ↦ mode m · factor(i, m)` along every latitude.
    fn fourier_rows<F: Fn(usize, f64) -> Complex64>(
        &mut self,
        planner: &mut FftPlanner<f64>,
        factor: F,
    ) {
        let np = self.np;
        let fwd = planner.plan_fft_forward(np);
        let inv = planner.plan_fft_inverse(np);
        let mut row = vec![Complex64::new(0.0, 0.0); np];
        for i in 0..self.nt {
            for j in 0..np {
                row[j] = Complex64::new(self.u[i * np + j], 0.0);
            }
            fwd.process(&mut row);
            for (k, c) in row.iter_mut().enumerate() {
                let m = if k <= np / 2 {
                    k as f64
                } else {
                    k as f64 - np as f64
                };
                *c *= factor(i, m);
            }
            // The Nyquist mode has no symmetric partner; keep it real.
            if np.is_multiple_of(2) {
                row[np / 2] = Complex64::new(row[np / 2].re, 0.0);
            }
            inv.process(&mut row);
            for j in 0..np {
                self.u[i * np + j] = row[j].re / np as f64;
            }
        }
    }

    /// Masses in `bt` equal-area bands × `bp` sectors; cells are split by
    /// their area overlap with each band.
    fn bins(&self, bt: usize, bp: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; bp]; bt];
        let per = self.np / bp;
        for i in 0..self.nt {
            let c_hi = (i as f64 * self.dth).cos();
            let c_lo = ((i + 1) as f64 * self.dth).cos();
            for (b, row) in out.iter_mut().enumerate() {
                let b_hi = 1.0 - 2.0 * b as f64 / bt as f64;
                let b_lo = 1.0 - 2.0 * (b + 1) as f64 / bt as f64;
                let overlap = (c_hi.min(b_hi) - c_lo.max(b_lo)).max(0.0) / (c_hi - c_lo);
                if overlap == 0.0 {
                    continue;
                }
                for j in 0..self.np {
                    row[(j / per).min(bp - 1)] += overlap * self.u[i * self.np + j];
                }
            }
        }
        out
    }
}

fn bin_of(theta: f64, phi: f64, bt: usize, bp: usize) -> (usize, usize) {
    let c = theta.cos();
    let b = (((1.0 - c) / 2.0 * bt as f64).floor() as usize).min(bt - 1);
    let s = ((phi.rem_euclid(2.0 * PI) / (2.0 * PI) * bp as f64).floor() as usize).min(bp - 1);
    (b, s)
}

fn total_variation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    0.5 * a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}

/// Solves the Fokker–Planck equation from a von Mises–Fisher initial law and
/// compares bin masses with an ensemble of the reduction diffusion (or with
/// the uniform law for the Brownian model) by total variation at every
/// checkpoint.
pub fn fokker_planck_cp1(
    h: &HermitianOperator,
    init: &VonMisesCap,
    cfg: &FokkerPlanckConfig,
) -> Result<FokkerPlanckReport> {
    let basis = EigenBasis::new(h)?;
    if cfg.n_theta < 4
        || cfg.n_phi < 4
        || cfg.bins_theta == 0
        || cfg.bins_phi == 0
        || !cfg.n_phi.is_multiple_of(cfg.bins_phi)
    {
        return Err(Error::Configuration(
            "grid needs ≥ 4 cells per direction and sectors dividing n_phi".into(),
        ));
    }
    if !(cfg.cfl > 0.0 && cfg.cfl <= 1.0) {
        return Err(Error::Configuration(format!(
            "cfl must lie in (0, 1], got {}",
            cfg.cfl
        )));
    }
    let mut checkpoints = cfg.checkpoints.clone();
    if checkpoints.is_empty() || checkpoints.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Configuration("checkpoints must be positive".into()));
    }
    checkpoints.sort_by(f64::total_cmp);
    let de = basis.e[1] - basis.e[0];
    let sigma = cfg.sigma;

    let mut grid = SphereGrid::from_cap(cfg.n_theta, cfg.n_phi, init);
    let stiff = grid.stiffness(cfg.model, sigma, de);
    let dt_max = if stiff > 0.0 {
        cfg.cfl / stiff
    } else {
        f64::INFINITY
    };
    if let Some(dt) = cfg.pde_dt {
        if !(dt > 0.0) || dt > dt_max {
            return Err(Error::Configuration(format!(
                "pde_dt = {dt} violates the CFL bound {dt_max:.3e} (cfl = {})",
                cfg.cfl
            )));
        }
    }
    let target_dt = cfg.pde_dt.unwrap_or(dt_max.min(checkpoints[0]));

    let mut planner = FftPlanner::new();
    let mut pde_bins = Vec::with_capacity(checkpoints.len());
    let mut pole_mass = Vec::with_capacity(checkpoints.len());
    let mut t = 0.0;
    let mut used_dt: f64 = 0.0;
    for &tc in &checkpoints {
        let span = tc - t;
        let n = (span / target_dt).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        used_dt = used_dt.max(dt);
        for _ in 0..n {
            grid.theta_step(cfg.model, sigma, de, dt);
            if cfg.model == FpModel::BrownianMotion {
                let s2 = sigma * sigma;
                let rates: Vec<f64> = (0..grid.nt)
                    .map(|i| 0.5 * s2 / grid.theta(i).sin().powi(2))
                    .collect();
                grid.fourier_rows(&mut planner, |i, m| {
                    Complex64::new((-rates[i] * m * m * dt).exp(), 0.0)
                });
            }
        }
        if cfg.model == FpModel::Reduction {
            // u(φ, t + s) = u(φ + ΔE s, t).
            grid.fourier_rows(&mut planner, |_, m| {
                Complex64::from_polar(1.0, m * de * span)
            });
        }
        t = tc;
        let bins = grid.bins(cfg.bins_theta, cfg.bins_phi);
        pole_mass.push((bins[0].iter().sum(), bins[cfg.bins_theta - 1].iter().sum()));
        pde_bins.push(bins);
    }

    let reference_bins = match cfg.model {
        FpModel::BrownianMotion => {
            let m = 1.0 / (cfg.bins_theta * cfg.bins_phi) as f64;
            vec![vec![vec![m; cfg.bins_phi]; cfg.bins_theta]; checkpoints.len()]
        }
        FpModel::Reduction => ensemble_bins(h, &basis, init, cfg, &checkpoints)?,
    };
    let tv: Vec<f64> = pde_bins
        .iter()
        .zip(&reference_bins)
        .map(|(a, b)| total_variation(a, b))
        .collect();
    let worst = tv.iter().cloned().fold(0.0, f64::max);
    let reference = match cfg.model {
        FpModel::Reduction => format!("{}-trajectory ensemble", cfg.ensemble_size),
        FpModel::BrownianMotion => "uniform law".to_string(),
    };
    let verdict = TestVerdict::judge(
        "fokker_planck",
        worst,
        cfg.tv_threshold,
        format!(
            "TV(PDE, {reference}) = [{}] at t = [{}]",
            tv.iter()
                .map(|x| format!("{x:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            checkpoints
                .iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
    Ok(FokkerPlanckReport {
        verdict,
        checkpoints,
        tv,
        pde_bins,
        reference_bins,
        pole_mass,
        pde_dt: used_dt,
    })
}

/// Histogram of an ensemble started from samples of `init`.
fn ensemble_bins(
    h: &HermitianOperator,
    basis: &EigenBasis,
    init: &VonMisesCap,
    cfg: &FokkerPlanckConfig,
    checkpoints: &[f64],
) -> Result<Vec<Vec<Vec<f64>>>> {
    if cfg.ensemble_size == 0 {
        return Err(Error::Configuration(
            "ensemble_size must be at least 1".into(),
        ));
    }
    let backend = Arc::new(GeometryBackend::projective(1)?);
    let obs = ObservableFunction::linear(backend.clone(), h.clone())?;
    let integrator = Integrator::new(&obs, cfg.sigma, cfg.sde_dt, cfg.scheme)?;
    let marks: Vec<usize> = checkpoints
        .iter()
        .map(|t| (t / cfg.sde_dt).round().max(1.0) as usize)
        .collect();
    let total = *marks.last().expect("non-empty");
    let (bt, bp) = (cfg.bins_theta, cfg.bins_phi);
    let runs = map_indexed(
        cfg.ensemble_size,
        cfg.threads,
        |i| -> Result<Vec<(usize, usize)>> {
            let mut rng = trajectory_rng(cfg.master_seed ^ INITIAL_STREAM_SALT, i as u64);
            let (th, ph) = init.sample(&mut rng);
            let mut p: ChartPoint = backend.from_homogeneous(&[basis.state(th, ph)])?;
            backend.normalize_chart(&mut p);
            let noise = NoisePath::generate(cfg.master_seed, i as u64, total, cfg.sde_dt);
            let mut out = Vec::with_capacity(marks.len());
            let mut next = 0;
            for (k, &dw) in noise.increments.iter().enumerate() {
                let state = integrator.local(&p)?;
                p = integrator.advance(&p, &state, dw, k)?;
                while next < marks.len() && marks[next] == k + 1 {
                    let (th, ph) = basis.angles(&backend.homogeneous(&p)[0]);
                    out.push(bin_of(th, ph, bt, bp));
                    next += 1;
                }
            }
            Ok(out)
        },
    )?;
    let mut hist = vec![vec![vec![0.0; bp]; bt]; checkpoints.len()];
    let w = 1.0 / cfg.ensemble_size as f64;
    for run in runs {
        for (c, (b, s)) in run?.into_iter().enumerate() {
            hist[c][b][s] += w;
        }
    }
    Ok(hist)
}
