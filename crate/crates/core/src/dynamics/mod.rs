//! The reduction diffusion
//!
//! ```text
//! dx^a = 2ω^{ab}∇_bH dt − ¼σ²∇^aV dt + σ∇^aH dW        (covariant Ito)
//! ```
//!
//! integrated in chart coordinates, where the covariant differential picks up
//! the extra drift `−½σ²Γ^a_bc ∇^bH ∇^cH`.
//!
//! Each step splits the drift: the Hamiltonian part is a Killing flow and is
//! applied exactly (`e^{−iH dt}` on homogeneous coordinates, RK4 for custom
//! observables), the dissipative drift and noise go through Euler–Maruyama or
//! Milstein. Both pieces are first order, so the scheme keeps weak order one,
//! and with `σ = 0` energy and dispersion are conserved to rounding.

pub mod ensemble;
pub mod sde;
pub mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ensemble::{
    curvature_constants, map_indexed, run_ensemble, run_ensemble_with, EnsembleStats, OutcomeCount,
    Regression, SeriesStats, TerminalStats,
};
pub use sde::{coordinate_drift, step, volatility_vector, Integrator, LocalState};
pub use trajectory::{
    detect_collapse, label_state, simulate_trajectory, CollapseLabel, Outcome, Trajectory,
};

/// Default hold count for the collapse rule.
pub const DEFAULT_HOLD_STEPS: usize = 50;
/// Collapse threshold relative to the initial dispersion.
pub const RELATIVE_COLLAPSE_EPSILON: f64 = 1e-6;
/// Threshold relative to `‖H‖²` when the initial dispersion vanishes.
pub const EIGENSTATE_COLLAPSE_EPSILON: f64 = 1e-12;
/// Steps moving any coordinate beyond this modulus are rejected.
pub const BLOW_UP_MODULUS: f64 = 1e6;
/// Target number of recorded samples when no stride is configured.
pub const DEFAULT_RECORDS: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// Adds `½ (b·∂)b (dW² − dt)`; strong order one for the scalar noise.
    Milstein,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub sigma: f64,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Absolute collapse threshold; `None` applies `1e−6·V₀`
    /// (or `1e−12·‖H‖²` when `V₀ = 0`).
    #[serde(default)]
    pub collapse_epsilon: Option<f64>,
    #[serde(default = "default_hold")]
    pub collapse_hold_steps: usize,
    pub master_seed: u64,
    pub ensemble_size: usize,
    /// Steps between recorded samples; `None` records about 200 samples.
    #[serde(default)]
    pub record_stride: Option<usize>,
    /// Stop integrating once collapse is confirmed, freezing the recorded scalars.
    #[serde(default = "default_true")]
    pub early_stop: bool,
}

fn default_hold() -> usize {
    DEFAULT_HOLD_STEPS
}

fn default_true() -> bool {
    true
}

impl SdeConfig {
    pub fn new(sigma: f64, dt: f64, horizon: f64, master_seed: u64, ensemble_size: usize) -> Self {
        Self {
            sigma,
            dt,
            horizon,
            scheme: Scheme::EulerMaruyama,
            collapse_epsilon: None,
            collapse_hold_steps: DEFAULT_HOLD_STEPS,
            master_seed,
            ensemble_size,
            record_stride: None,
            early_stop: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Configuration(msg));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!(
                "sigma must be finite and non-negative, got {}",
                self.sigma
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.dt >= self.horizon {
            return bad(format!(
                "dt = {} must be below the horizon {}",
                self.dt, self.horizon
            ));
        }
        if let Some(eps) = self.collapse_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad(format!("collapse_epsilon must be positive, got {eps}"));
            }
        }
        if self.collapse_hold_steps == 0 {
            return bad("collapse_hold_steps must be at least 1".into());
        }
        if self.ensemble_size == 0 {
            return bad("ensemble_size must be at least 1".into());
        }
        if self.record_stride == Some(0) {
            return bad("record_stride must be at least 1".into());
        }
        Ok(())
    }

    /// Number of steps covering the horizon.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn stride(&self) -> usize {
        self.record_stride
            .unwrap_or_else(|| (self.steps() / DEFAULT_RECORDS).max(1))
    }

    /// Step indices at which samples are recorded; always includes both ends.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.steps();
        let s = self.stride();
        let mut out: Vec<usize> = (0..=n).step_by(s).collect();
        if *out.last().expect("non-empty") != n {
            out.push(n);
        }
        out
    }

    pub fn collapse_threshold(&self, v0: f64, h_norm: f64) -> f64 {
        self.collapse_epsilon.unwrap_or_else(|| {
            if v0 > 0.0 {
                RELATIVE_COLLAPSE_EPSILON * v0
            } else {
                EIGENSTATE_COLLAPSE_EPSILON * h_norm.max(1.0).powi(2)
            }
        })
    }
}

/// `dt = min(0.01/‖H‖, τ/10⁴)` with `τ = (κσ²V₀)^{-1}`.
pub fn default_dt(h_norm: f64, kappa: f64, sigma: f64, v0: f64) -> f64 {
    let unitary = 0.01 / if h_norm > 0.0 { h_norm } else { 1.0 };
    let tau = reduction_time(kappa, sigma, v0);
    if tau.is_finite() {
        unitary.min(tau / 1e4)
    } else {
        unitary
    }
}

/// `τ = (κσ²V₀)^{-1}`; infinite when the product vanishes.
pub fn reduction_time(kappa: f64, sigma: f64, v0: f64) -> f64 {
    let rate = kappa * sigma * sigma * v0;
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Random stream of trajectory `index`: ChaCha8 keyed by the master seed, with
/// the index as stream id, so streams are independent of scheduling.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Brownian increments `dW_k ~ N(0, dt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn generate(master_seed: u64, index: u64, steps: usize, dt: f64) -> Self {
        let mut rng = trajectory_rng(master_seed, index);
        let sd = dt.sqrt();
        let increments = (0..steps)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        Self { dt, increments }
    }

    pub fn zero(steps: usize, dt: f64) -> Self {
        Self {
            dt,
            increments: vec![0.0; steps],
        }
    }

    /// Same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.increments.len().is_multiple_of(factor) {
            return Err(Error::InvalidInput(format!(
                "cannot coarsen {} increments by {factor}",
                self.increments.len()
            )));
        }
        Ok(Self {
            dt: self.dt * factor as f64,
            increments: self
                .increments
                .chunks(factor)
                .map(|c| c.iter().sum())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_grid_includes_both_ends() {
        let mut c = SdeConfig::new(0.5, 0.1, 1.05, 1, 1);
        c.record_stride = Some(4);
        assert_eq!(c.steps(), 11);
        assert_eq!(c.record_steps(), vec![0, 4, 8, 11]);
    }

    #[test]
    fn noise_streams_are_reproducible_and_distinct() {
        let a = NoisePath::generate(7, 0, 100, 0.01);
        let b = NoisePath::generate(7, 0, 100, 0.01);
        let c = NoisePath::generate(7, 1, 100, 0.01);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let coarse = a.coarsen(4).unwrap();
        assert_eq!(coarse.len(), 25);
        assert!((coarse.increments[0] - a.increments[..4].iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(SdeConfig::new(-1.0, 0.1, 1.0, 0, 1).validate().is_err());
        assert!(SdeConfig::new(1.0, 2.0, 1.0, 0, 1).validate().is_err());
        assert!(SdeConfig::new(1.0, 0.1, 1.0, 0, 0).validate().is_err());
        assert!(SdeConfig::new(1.0, 0.1, 1.0, 0, 1).validate().is_ok());
    }

    #[test]
    fn default_step_rule() {
        // τ = 16 for σ = 0.5, V₀ = 0.25, κ = 1.
        assert!((default_dt(1.0, 1.0, 0.5, 0.25) - 16.0 / 1e4).abs() < 1e-15);
        assert_eq!(default_dt(2.0, 1.0, 0.0, 0.25), 0.005);
    }
}
