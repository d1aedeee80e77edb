//! Seeded ensembles and their aggregate statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trajectory::{Outcome, Runner, Trajectory};
use super::{reduction_time, NoisePath, SdeConfig};
use crate::error::{Error, Result};
use crate::geometry::{curvature_extremes, BackendKind, ChartPoint};
use crate::observables::{ObservableFunction, Spectrum};

/// Samples used when `κ, λ` must be estimated on a potential backend.
const CURVATURE_SAMPLES: usize = 2000;
/// Number of interior sub-grid points for the increment regressions.
const REGRESSION_KNOTS: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    /// Standard error of the mean.
    pub se: Vec<f64>,
    /// Unbiased sample variance.
    pub var: Vec<f64>,
}

impl SeriesStats {
    /// Column statistics of `rows` (one row per trajectory), summed in row order.
    pub fn from_rows<'a, I>(rows: I, len: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; len];
        for r in rows.clone() {
            n += 1;
            for (s, x) in sum.iter_mut().zip(r) {
                *s += x;
            }
        }
        if n == 0 {
            return Self {
                mean: vec![f64::NAN; len],
                se: vec![f64::NAN; len],
                var: vec![f64::NAN; len],
            };
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut ss = vec![0.0; len];
        for r in rows {
            for ((s, x), m) in ss.iter_mut().zip(r).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let var: Vec<f64> = ss
            .iter()
            .map(|s| if n > 1 { s / (n - 1) as f64 } else { 0.0 })
            .collect();
        let se = var.iter().map(|v| (v / n as f64).sqrt()).collect();
        Self { mean, se, var }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCount {
    /// Eigenspace index per factor; empty for custom observables.
    pub eigenspaces: Vec<usize>,
    pub eigenvalue: f64,
    pub count: usize,
    /// Fraction of completed trajectories.
    pub frequency: f64,
    /// Squared overlap of the initial state with the eigenspace product.
    pub born: Option<f64>,
}

impl OutcomeCount {
    /// Binomial standard error of the frequency against the Born weight.
    pub fn born_se(&self, n: usize) -> Option<f64> {
        self.born.map(|p| (p * (1.0 - p) / n as f64).sqrt())
    }
}

/// Least-squares fit of an increment `X_{t₂} − X_{t₁}` on `X_{t₁}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub start: f64,
    pub end: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub n: usize,
}

impl Regression {
    pub fn fit(start: f64, end: f64, x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let nf = n as f64;
        let mx = x.iter().sum::<f64>() / nf;
        let my = y.iter().sum::<f64>() / nf;
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        // A degenerate regressor carries no information: report a zero slope
        // with zero uncertainty and let the mean increment speak.
        let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let (slope, slope_se) = if n > 2 && sxx > 1e-24 * scale * scale * nf {
            let slope = sxy / sxx;
            let rss: f64 = x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let r = b - my - slope * (a - mx);
                    r * r
                })
                .sum();
            (slope, (rss / (nf - 2.0) / sxx).sqrt())
        } else {
            (0.0, 0.0)
        };
        Self {
            start,
            end,
            slope,
            slope_se,
            intercept: my - slope * mx,
            n,
        }
    }

    /// Slope within `k` standard errors of zero (plus an absolute floor).
    pub fn consistent_with_zero(&self, k: f64, floor: f64) -> bool {
        self.slope.abs() <= k * self.slope_se + floor
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalStats {
    pub resolved: usize,
    /// `E[(H_∞ − H₀)²]` over resolved trajectories, `H_∞` the collapse label.
    pub mean_sq_dev: f64,
    pub se: f64,
    /// `Σ p_i (E_i − H₀)²` with Born weights, when available.
    pub born_sq_dev: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub sigma: f64,
    pub dt: f64,
    pub master_seed: u64,
    pub ensemble_size: usize,
    /// Trajectories that finished without blowing up.
    pub completed: usize,
    pub blow_ups: Vec<usize>,
    pub h0: f64,
    pub v0: f64,
    pub f0: Option<f64>,
    pub vf0: Option<f64>,
    pub kappa: f64,
    pub lambda: f64,
    /// `(κσ²V₀)^{-1}`.
    pub tau: f64,
    pub h: SeriesStats,
    pub v: SeriesStats,
    pub q: SeriesStats,
    pub kv2: SeriesStats,
    pub f: Option<SeriesStats>,
    pub vf: Option<SeriesStats>,
    /// `(H_t − H₀)²`.
    pub h_sq_dev: SeriesStats,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub outcomes: Vec<OutcomeCount>,
    pub unresolved: usize,
    pub terminal: TerminalStats,
    pub h_regressions: Vec<Regression>,
    pub f_regressions: Option<Vec<Regression>>,
    /// Every completed trajectory had a non-decreasing `Q_t`.
    pub q_monotone: bool,
    pub min_v: f64,
    /// At most 10% of trajectories blew up.
    pub valid: bool,
}

impl EnsembleStats {
    pub fn unresolved_fraction(&self) -> f64 {
        if self.completed == 0 {
            1.0
        } else {
            self.unresolved as f64 / self.completed as f64
        }
    }

    /// Ito-isometry bound `V₀/(1 + κσ²V₀t)` on the record grid.
    pub fn bound_v(&self, kappa: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|t| self.v0 / (1.0 + kappa * self.sigma * self.sigma * self.v0 * t))
            .collect()
    }
}

/// `(κ, λ)`: exact on projective spaces and products of them (`κ = 1/k` for
/// `k` factors on which `H` is not a multiple of the identity), sampled on
/// potential backends.
pub fn curvature_constants(h: &ObservableFunction, seed: u64) -> Result<(f64, f64)> {
    match h.backend().kind() {
        BackendKind::Projective { .. } => Ok((1.0, 1.0)),
        BackendKind::Product { .. } => {
            let active = h
                .operators()
                .map(|ops| {
                    ops.iter()
                        .filter(|o| spectrum_width(o.matrix()) > 0.0)
                        .count()
                })
                .unwrap_or(h.backend().factors().len())
                .max(1);
            Ok((1.0 / active as f64, 1.0))
        }
        BackendKind::Potential(_) => {
            let ex = curvature_extremes(h.backend(), h, CURVATURE_SAMPLES, seed)?;
            Ok((ex.kappa, ex.lambda))
        }
    }
}

fn spectrum_width(m: &crate::linalg::CMatrix) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
    if hi - lo > 1e-12 * scale {
        hi - lo
    } else {
        0.0
    }
}

/// Runs `work(i)` for `i in 0..n` on `threads` workers (the global pool when
/// `None`), returning results in index order.
pub fn map_indexed<T, F>(n: usize, threads: Option<usize>, work: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    let run = || (0..n).into_par_iter().map(&work).collect::<Vec<T>>();
    match threads {
        None => Ok(run()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

pub fn run_ensemble(
    h: &ObservableFunction,
    x0: &ChartPoint,
    config: &SdeConfig,
    track_f: Option<&ObservableFunction>,
) -> Result<EnsembleStats> {
    run_ensemble_with(h, x0, config, track_f, None)
}

/// As [`run_ensemble`] on a dedicated pool of `threads` workers. Results do not
/// depend on the thread count.
pub fn run_ensemble_with(
    h: &ObservableFunction,
    x0: &ChartPoint,
    config: &SdeConfig,
    track_f: Option<&ObservableFunction>,
    threads: Option<usize>,
) -> Result<EnsembleStats> {
    let runner = Runner::new(h, config, track_f, x0)?;
    let steps = config.steps();
    let results = map_indexed(config.ensemble_size, threads, |i| {
        let noise = NoisePath::generate(config.master_seed, i as u64, steps, config.dt);
        runner.run(x0, &noise.increments, false)
    })?;
    let mut trajs = Vec::with_capacity(results.len());
    let mut blow_ups = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trajs.push(t),
            Err(Error::BlowUp { .. }) => blow_ups.push(i),
            Err(e) => return Err(e),
        }
    }
    let (kappa, lambda) = curvature_constants(h, config.master_seed)?;
    aggregate(
        h,
        x0,
        config,
        track_f,
        runner.spectra.as_deref(),
        &trajs,
        blow_ups,
        kappa,
        lambda,
    )
}

#[allow(clippy::too_many_arguments)]
fn aggregate(
    h: &ObservableFunction,
    x0: &ChartPoint,
    config: &SdeConfig,
    track_f: Option<&ObservableFunction>,
    spectra: Option<&[Spectrum]>,
    trajs: &[Trajectory],
    blow_ups: Vec<usize>,
    kappa: f64,
    lambda: f64,
) -> Result<EnsembleStats> {
    let times: Vec<f64> = config
        .record_steps()
        .iter()
        .map(|&k| k as f64 * config.dt)
        .collect();
    let len = times.len();
    let h0 = h.expectation(x0)?;
    let v0 = h.dispersion(x0)?;
    let (f0, vf0) = match track_f {
        Some(f) => (Some(f.expectation(x0)?), Some(f.dispersion(x0)?)),
        None => (None, None),
    };
    let series =
        |get: fn(&Trajectory) -> &[f64]| SeriesStats::from_rows(trajs.iter().map(get), len);
    let hs = series(|t| &t.h_series);
    let vs = series(|t| &t.v_series);
    let qs = series(|t| &t.q_series);
    let kv2 = series(|t| &t.kv2_series);
    let fs = track_f.map(|_| series(|t| t.f_series.as_deref().expect("tracked")));
    let vfs = track_f.map(|_| series(|t| t.vf_series.as_deref().expect("tracked")));
    let sq_rows: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| t.h_series.iter().map(|x| (x - h0) * (x - h0)).collect())
        .collect();
    let h_sq_dev = SeriesStats::from_rows(sq_rows.iter().map(|r| r.as_slice()), len);

    // η_t = (Var V + κ⁻¹(E[K V²] − κ E[V²])) / V̄², ξ_t = ∫ η.
    let mut eta = Vec::with_capacity(len);
    for i in 0..len {
        let m = vs.mean[i];
        let ev2 = vs.var[i] + m * m;
        let num = vs.var[i] + (kv2.mean[i] - kappa * ev2) / kappa;
        eta.push(if m > 1e-300 && kappa > 0.0 {
            num / (m * m)
        } else {
            0.0
        });
    }
    let mut xi = vec![0.0; len];
    for i in 1..len {
        xi[i] = xi[i - 1] + 0.5 * (eta[i] + eta[i - 1]) * (times[i] - times[i - 1]);
    }

    let completed = trajs.len();
    let (outcomes, unresolved) = tabulate(h, x0, spectra, trajs)?;
    let terminal = terminal_stats(h0, &outcomes, trajs);

    let knots: Vec<usize> = (1..=REGRESSION_KNOTS)
        .map(|m| m * (len - 1) / (REGRESSION_KNOTS + 1))
        .chain(std::iter::once(len - 1))
        .collect();
    let regress = |get: &dyn Fn(&Trajectory) -> &[f64]| -> Vec<Regression> {
        knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let x: Vec<f64> = trajs.iter().map(|t| get(t)[w[0]]).collect();
                let y: Vec<f64> = trajs.iter().map(|t| get(t)[w[1]] - get(t)[w[0]]).collect();
                Regression::fit(times[w[0]], times[w[1]], &x, &y)
            })
            .collect()
    };
    let h_regressions = if completed > 0 {
        regress(&|t| &t.h_series)
    } else {
        Vec::new()
    };
    let f_regressions = (track_f.is_some() && completed > 0)
        .then(|| regress(&|t| t.f_series.as_deref().expect("tracked")));

    let q_monotone = trajs
        .iter()
        .all(|t| t.q_series.windows(2).all(|w| w[1] >= w[0]));
    let min_v = trajs
        .iter()
        .flat_map(|t| t.v_series.iter().cloned())
        .fold(f64::INFINITY, f64::min);
    let valid = blow_ups.len() * 10 <= config.ensemble_size;

    Ok(EnsembleStats {
        times,
        sigma: config.sigma,
        dt: config.dt,
        master_seed: config.master_seed,
        ensemble_size: config.ensemble_size,
        completed,
        blow_ups,
        h0,
        v0,
        f0,
        vf0,
        kappa,
        lambda,
        tau: reduction_time(kappa, config.sigma, v0),
        h: hs,
        v: vs,
        q: qs,
        kv2,
        f: fs,
        vf: vfs,
        h_sq_dev,
        eta,
        xi,
        outcomes,
        unresolved,
        terminal,
        h_regressions,
        f_regressions,
        q_monotone,
        min_v,
        valid,
    })
}

/// Outcome table over every eigenspace combination, or over distinct labels
/// for custom observables. Born weights (initial overlaps) are attached only
/// when a single factor carries the spectrum: with several active factors the
/// common noise correlates the factor outcomes, so products of overlaps are
/// not the outcome law.
fn tabulate(
    h: &ObservableFunction,
    x0: &ChartPoint,
    spectra: Option<&[Spectrum]>,
    trajs: &[Trajectory],
) -> Result<(Vec<OutcomeCount>, usize)> {
    let n = trajs.len().max(1) as f64;
    let mut unresolved = 0;
    let mut table: Vec<OutcomeCount> = Vec::new();
    if let Some(spectra) = spectra {
        let psis = h.backend().homogeneous(x0);
        let overlaps: Vec<Vec<f64>> = spectra
            .iter()
            .zip(&psis)
            .map(|(s, p)| s.overlaps(p))
            .collect();
        let sizes: Vec<usize> = spectra.iter().map(|s| s.eigenvalues.len()).collect();
        let total: usize = sizes.iter().product();
        let single_active = sizes.iter().filter(|&&s| s > 1).count() <= 1;
        for code in 0..total {
            let mut rem = code;
            let mut idx = Vec::with_capacity(sizes.len());
            for &s in sizes.iter().rev() {
                idx.push(rem % s);
                rem /= s;
            }
            idx.reverse();
            let born = idx.iter().zip(&overlaps).map(|(&i, o)| o[i]).product();
            let eigenvalue = idx
                .iter()
                .zip(spectra)
                .map(|(&i, s)| s.eigenvalues[i])
                .sum();
            table.push(OutcomeCount {
                eigenspaces: idx,
                eigenvalue,
                count: 0,
                frequency: 0.0,
                born: single_active.then_some(born),
            });
        }
    }
    let tol = 1e-6 * h.scale().max(1.0);
    for t in trajs {
        match &t.outcome {
            Outcome::Unresolved => unresolved += 1,
            Outcome::Collapsed(label) => {
                let slot = table.iter_mut().position(|o| {
                    if label.eigenspaces.is_empty() {
                        (o.eigenvalue - label.eigenvalue).abs() <= tol
                    } else {
                        o.eigenspaces == label.eigenspaces
                    }
                });
                match slot {
                    Some(i) => table[i].count += 1,
                    None => table.push(OutcomeCount {
                        eigenspaces: label.eigenspaces.clone(),
                        eigenvalue: label.eigenvalue,
                        count: 1,
                        frequency: 0.0,
                        born: None,
                    }),
                }
            }
        }
    }
    for o in &mut table {
        o.frequency = o.count as f64 / n;
    }
    Ok((table, unresolved))
}

fn terminal_stats(h0: f64, outcomes: &[OutcomeCount], trajs: &[Trajectory]) -> TerminalStats {
    let resolved: usize = outcomes.iter().map(|o| o.count).sum();
    let dev = |e: f64| (e - h0) * (e - h0);
    let born_sq_dev = outcomes
        .iter()
        .map(|o| o.born.map(|p| p * dev(o.eigenvalue)))
        .sum::<Option<f64>>();
    if resolved == 0 {
        return TerminalStats {
            resolved,
            mean_sq_dev: f64::NAN,
            se: f64::NAN,
            born_sq_dev,
        };
    }
    let r = resolved as f64;
    let mean = outcomes
        .iter()
        .map(|o| o.count as f64 * dev(o.eigenvalue))
        .sum::<f64>()
        / r;
    let ss: f64 = trajs
        .iter()
        .filter_map(|t| t.outcome.label())
        .map(|l| (dev(l.eigenvalue) - mean).powi(2))
        .sum();
    let se = if resolved > 1 {
        (ss / (r - 1.0) / r).sqrt()
    } else {
        0.0
    };
    TerminalStats {
        resolved,
        mean_sq_dev: mean,
        se,
        born_sq_dev,
    }
}
