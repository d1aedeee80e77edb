//! Instantaneous drift of the dispersion from short restart ensembles.
//!
//! From each start point, `E[W_T − W_0]/T` estimates the drift of `W = V^H`
//! (or `V^F`). The martingale part `Σ_k ∂_b W(x_k) dW_k`, with `b = σ∇H`, is
//! subtracted as a zero-mean control variate, and estimates at `T` and `T/2`
//! are Richardson-combined to remove the `O(T)` bias.

use serde::{Deserialize, Serialize};

use super::{TestVerdict, SE_MULTIPLIER};
use crate::dynamics::{map_indexed, Integrator, NoisePath, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{bisectional_curvature_fh, sectional_curvature_h, ChartPoint};
use crate::observables::ObservableFunction;

/// Dispersions below this are treated as an eigenstate (expected drift 0).
const CRITICAL_V: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConfig {
    pub sigma: f64,
    pub dt: f64,
    /// Steps per restart; rounded up to an even count.
    pub steps: usize,
    pub samples: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftTarget {
    V,
    VF,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftEstimate {
    pub start: ChartPoint,
    pub target: DriftTarget,
    /// `−σ²K_H V²` or `−σ²K_FH V^F V^H` at the start point.
    pub expected: f64,
    /// Richardson-extrapolated drift estimate.
    pub estimate: f64,
    pub se: f64,
    /// Plain estimates over the full and half horizons.
    pub full: f64,
    pub half: f64,
    /// `|full − half|`, used as the bias allowance.
    pub bias: f64,
    pub z: f64,
    pub inconclusive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub verdict: TestVerdict,
    pub estimates: Vec<DriftEstimate>,
}

/// Compares Monte Carlo drifts of `V^H` (or `V^F` when `f` is given) against
/// the curvature laws at every start point.
pub fn drift_regression_v(
    h: &ObservableFunction,
    starts: &[ChartPoint],
    f: Option<&ObservableFunction>,
    cfg: &DriftConfig,
) -> Result<DriftReport> {
    if cfg.samples < 2 || cfg.steps == 0 {
        return Err(Error::Configuration(
            "drift estimation needs ≥ 2 samples and ≥ 1 step".into(),
        ));
    }
    let name = if f.is_some() { "drift_VF" } else { "drift_V" };
    if let Some(f) = f {
        if let Some(p) = starts.first() {
            if !f.commutes_with(h, p)? {
                return Ok(DriftReport {
                    verdict: TestVerdict::not_applicable(name, "F does not commute with H".into()),
                    estimates: Vec::new(),
                });
            }
        }
    }
    let integrator = Integrator::new(h, cfg.sigma, cfg.dt, cfg.scheme)?;
    let m = cfg.steps + cfg.steps % 2;
    let mut estimates = Vec::with_capacity(starts.len());
    for (si, x0) in starts.iter().enumerate() {
        estimates.push(estimate_at(&integrator, f, x0, si, m, cfg)?);
    }
    let worst = estimates
        .iter()
        .map(|e| e.z)
        .fold(0.0f64, |a, z| if z.is_nan() { z } else { a.max(z) });
    let summary = estimates
        .iter()
        .map(|e| {
            format!(
                "{:.6} vs {:.6} (±{:.1e}, bias {:.1e})",
                e.estimate, e.expected, e.se, e.bias
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let verdict = if estimates.iter().any(|e| e.inconclusive) && worst <= SE_MULTIPLIER {
        TestVerdict::inconclusive(
            name,
            format!("horizon too long for the Richardson check: {summary}"),
        )
    } else {
        TestVerdict::judge(
            name,
            worst,
            SE_MULTIPLIER,
            format!("max z = {worst:.3}; {summary}"),
        )
    };
    Ok(DriftReport { verdict, estimates })
}

fn estimate_at(
    integrator: &Integrator,
    f: Option<&ObservableFunction>,
    x0: &ChartPoint,
    start_index: usize,
    m: usize,
    cfg: &DriftConfig,
) -> Result<DriftEstimate> {
    let h = integrator.observable();
    let sigma = cfg.sigma;
    let target = if f.is_some() {
        DriftTarget::VF
    } else {
        DriftTarget::V
    };
    let w_at = |p: &ChartPoint| -> Result<f64> {
        match f {
            Some(f) => f.dispersion(p),
            None => Ok(integrator.local(p)?.v),
        }
    };
    let vh = h.dispersion(x0)?;
    let expected = match f {
        None if vh > CRITICAL_V => {
            -sigma * sigma * sectional_curvature_h(h.backend(), x0, &h.gradient(x0)?)? * vh * vh
        }
        Some(f) => {
            let vf = f.dispersion(x0)?;
            if vh > CRITICAL_V && vf > CRITICAL_V {
                let k =
                    bisectional_curvature_fh(h.backend(), x0, &f.gradient(x0)?, &h.gradient(x0)?)?;
                -sigma * sigma * k * vf * vh
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    let w0 = w_at(x0)?;
    let offset = (start_index * cfg.samples) as u64;
    let rows = map_indexed(cfg.samples, cfg.threads, |i| -> Result<(f64, f64)> {
        let noise = NoisePath::generate(cfg.master_seed, offset + i as u64, m, cfg.dt);
        let mut p = x0.clone();
        let mut cv = 0.0;
        let mut half = 0.0;
        for (k, &dw) in noise.increments.iter().enumerate() {
            let state = integrator.local(&p)?;
            cv += directional(&w_at, &p, &state.vol)? * dw;
            p = integrator.advance(&p, &state, dw, k)?;
            if k + 1 == m / 2 {
                half = w_at(&p)? - w0 - cv;
            }
        }
        Ok((half, w_at(&p)? - w0 - cv))
    })?;
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let t_full = m as f64 * cfg.dt;
    let t_half = t_full / 2.0;
    let full_v: Vec<f64> = rows.iter().map(|r| r.1 / t_full).collect();
    let half_v: Vec<f64> = rows.iter().map(|r| r.0 / t_half).collect();
    let rich_v: Vec<f64> = full_v
        .iter()
        .zip(&half_v)
        .map(|(a, b)| 2.0 * b - a)
        .collect();
    let diff_v: Vec<f64> = full_v.iter().zip(&half_v).map(|(a, b)| a - b).collect();
    let (full, _) = mean_se(&full_v);
    let (half, _) = mean_se(&half_v);
    let (estimate, se) = mean_se(&rich_v);
    let (_, diff_se) = mean_se(&diff_v);
    let bias = (full - half).abs();
    // A Richardson gap well beyond noise and comparable to the signal means
    // the horizon is outside the linear regime.
    let inconclusive = bias > 0.5 * expected.abs() + SE_MULTIPLIER * diff_se + 1e-14;
    let excess = (estimate - expected).abs() - bias;
    let z = super::z_score(excess, se, 1e-14 * (1.0 + expected.abs()));
    Ok(DriftEstimate {
        start: x0.clone(),
        target,
        expected,
        estimate,
        se,
        full,
        half,
        bias,
        z,
        inconclusive,
    })
}

/// `∂_b W` by a central difference along `b`.
fn directional<F: Fn(&ChartPoint) -> Result<f64>>(w: &F, p: &ChartPoint, b: &[f64]) -> Result<f64> {
    let bmax = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if bmax == 0.0 {
        return Ok(0.0);
    }
    let xmax = p.coords.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let e = 1e-5 * (1.0 + xmax) / bmax;
    let shift = |s: f64| {
        let mut q = p.clone();
        for (c, t) in q.coords.iter_mut().zip(b) {
            *c += s * t;
        }
        q
    };
    Ok((w(&shift(e))? - w(&shift(-e))?) / (2.0 * e))
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}
