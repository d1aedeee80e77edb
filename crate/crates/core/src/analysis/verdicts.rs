//! Verdicts computed purely from [`EnsembleStats`].

use serde::{Deserialize, Serialize};

use super::{z_score, TestVerdict, MIN_MARTINGALE_ENSEMBLE, SE_MULTIPLIER};
use crate::dynamics::EnsembleStats;

/// Relative floor absorbing rounding in "exact" comparisons.
const ROUNDING: f64 = 1e-10;
/// Terminal verdicts need at least 95% of trajectories resolved.
const MAX_UNRESOLVED: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observed {
    H,
    F,
}

/// `|mean X_t − X₀| ≤ 3 SE` at every record, and increments over a sub-grid
/// uncorrelated with the value at the start of each interval.
pub fn martingale_test(stats: &EnsembleStats, which: Observed) -> TestVerdict {
    let name = match which {
        Observed::H => "martingale_H",
        Observed::F => "martingale_F",
    };
    let (series, x0, regressions) = match which {
        Observed::H => (&stats.h, stats.h0, Some(&stats.h_regressions)),
        Observed::F => match (&stats.f, stats.f0) {
            (Some(s), Some(f0)) => (s, f0, stats.f_regressions.as_ref()),
            _ => {
                return TestVerdict::not_applicable(
                    name,
                    "no tracked observable commuting with H".into(),
                )
            }
        },
    };
    if stats.completed < MIN_MARTINGALE_ENSEMBLE {
        return TestVerdict::inconclusive(
            name,
            format!(
                "{} completed trajectories, need {MIN_MARTINGALE_ENSEMBLE}",
                stats.completed
            ),
        );
    }
    let floor = ROUNDING * x0.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut worst_t = 0.0;
    for ((m, se), t) in series.mean.iter().zip(&series.se).zip(&stats.times) {
        let z = z_score((m - x0).abs(), *se, floor);
        if z > worst || z.is_nan() {
            worst = z;
            worst_t = *t;
        }
    }
    let mut worst_slope = 0.0f64;
    for r in regressions.into_iter().flatten() {
        worst_slope = worst_slope.max(z_score(r.slope.abs(), r.slope_se, floor));
    }
    let statistic = worst.max(worst_slope);
    TestVerdict::judge(
        name,
        statistic,
        SE_MULTIPLIER,
        format!(
            "max |mean − X₀|/SE = {worst:.3} at t = {worst_t:.4}; max increment-regression slope/SE = {worst_slope:.3}"
        ),
    )
}

/// `mean V_t ≤ V₀/(1 + κσ²V₀t) + 3 SE`, `mean V` non-increasing within 3
/// combined SE, and `ξ_t ≥ 0` up to rounding.
pub fn supermartingale_bound(stats: &EnsembleStats, kappa: f64) -> TestVerdict {
    let name = "supermartingale_V";
    if !(kappa > 0.0) {
        return TestVerdict::not_applicable(name, format!("κ = {kappa} is not positive"));
    }
    let floor = ROUNDING * stats.v0.max(f64::MIN_POSITIVE);
    let bound = stats.bound_v(kappa);
    let v = &stats.v;
    let mut bound_z = 0.0f64;
    let mut at = 0.0;
    for i in 0..v.mean.len() {
        let z = z_score(v.mean[i] - bound[i], v.se[i], floor);
        if z > bound_z || z.is_nan() {
            bound_z = z;
            at = stats.times[i];
        }
    }
    let mut mono_z = 0.0f64;
    for i in 1..v.mean.len() {
        let se = (v.se[i] * v.se[i] + v.se[i - 1] * v.se[i - 1]).sqrt();
        mono_z = mono_z.max(z_score(v.mean[i] - v.mean[i - 1], se, floor));
    }
    let xi_min = stats.xi.iter().cloned().fold(0.0, f64::min);
    let xi_tol = 1e-9 * stats.xi.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let xi_ok = xi_min >= -xi_tol;
    let statistic = if xi_ok {
        bound_z.max(mono_z)
    } else {
        f64::INFINITY
    };
    TestVerdict::judge(
        name,
        statistic,
        SE_MULTIPLIER,
        format!(
            "κ = {kappa}: max excess over bound = {bound_z:.3} SE at t = {at:.4}; max increase = {mono_z:.3} SE; min ξ = {xi_min:.3e}"
        ),
    )
}

/// `E[(H_t − H₀)²] = σ² mean Q_t` within 3 combined SE at every record.
pub fn ito_isometry_check(stats: &EnsembleStats) -> TestVerdict {
    let name = "ito_isometry";
    let s2 = stats.sigma * stats.sigma;
    let floor = ROUNDING
        * stats.v0.max(stats.h0.abs()).max(1.0)
        * (1.0 + s2 * stats.times.last().unwrap_or(&0.0));
    let mut worst = 0.0f64;
    let mut at = 0.0;
    for i in 0..stats.times.len() {
        let lhs = stats.h_sq_dev.mean[i];
        let rhs = s2 * stats.q.mean[i];
        let se = (stats.h_sq_dev.se[i].powi(2) + (s2 * stats.q.se[i]).powi(2)).sqrt();
        let z = z_score((lhs - rhs).abs(), se, floor);
        if z > worst || z.is_nan() {
            worst = z;
            at = stats.times[i];
        }
    }
    TestVerdict::judge(
        name,
        worst,
        SE_MULTIPLIER,
        format!("max |E[(H−H₀)²] − σ²Q̄|/SE = {worst:.3} at t = {at:.4}"),
    )
}

/// `V₀/κ ≥ E[(H_∞ − H₀)²] ≥ V₀/λ` within 3 SE, with `H_∞` the collapse label.
pub fn terminal_variance_check(stats: &EnsembleStats, kappa: f64, lambda: f64) -> TestVerdict {
    let name = "terminal_variance";
    let unresolved = stats.unresolved_fraction();
    if unresolved > MAX_UNRESOLVED {
        return TestVerdict::inconclusive(
            name,
            format!(
                "{:.1}% of trajectories unresolved (limit 5%)",
                100.0 * unresolved
            ),
        );
    }
    if !(kappa > 0.0 && lambda >= kappa) {
        return TestVerdict::not_applicable(
            name,
            format!("curvature bounds κ = {kappa}, λ = {lambda} unusable"),
        );
    }
    let t = &stats.terminal;
    let lower = stats.v0 / lambda;
    let upper = stats.v0 / kappa;
    let floor = ROUNDING * stats.v0.max(1e-300);
    let below = z_score(lower - t.mean_sq_dev, t.se, floor);
    let above = z_score(t.mean_sq_dev - upper, t.se, floor);
    TestVerdict::judge(
        name,
        below.max(above),
        SE_MULTIPLIER,
        format!(
            "E[(H_∞−H₀)²] = {:.6} ± {:.6} against [{lower:.6}, {upper:.6}] over {} resolved",
            t.mean_sq_dev, t.se, t.resolved
        ),
    )
}

/// Outcome frequencies against Born weights, within 3 binomial SE each.
pub fn born_frequency_check(stats: &EnsembleStats) -> TestVerdict {
    let name = "born_frequencies";
    if stats.outcomes.iter().any(|o| o.born.is_none()) || stats.outcomes.is_empty() {
        return TestVerdict::not_applicable(name, "no Born weights for this observable".into());
    }
    let unresolved = stats.unresolved_fraction();
    if unresolved > MAX_UNRESOLVED {
        return TestVerdict::inconclusive(
            name,
            format!(
                "{:.1}% of trajectories unresolved (limit 5%)",
                100.0 * unresolved
            ),
        );
    }
    let n = stats.completed;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for o in &stats.outcomes {
        let p = o.born.expect("checked");
        let se = o.born_se(n).unwrap_or(0.0);
        let z = z_score((o.frequency - p).abs(), se, 1e-12);
        worst = worst.max(z);
        parts.push(format!(
            "{:?}: {:.4} vs {:.4}",
            o.eigenspaces, o.frequency, p
        ));
    }
    TestVerdict::judge(
        name,
        worst,
        SE_MULTIPLIER,
        format!(
            "max |freq − p|/SE = {worst:.3}; unresolved {:.2}%; {}",
            100.0 * stats.unresolved_fraction(),
            parts.join(", ")
        ),
    )
}
