//! Statistical verdicts on ensembles, and independent oracles: the lifted
//! Hilbert-space simulation, the density-matrix (Lindblad) average, and a
//! Fokker–Planck solver on the Bloch sphere.
//!
//! Every verdict uses a 3-standard-error band per time point with no
//! multiplicity correction.

pub mod drift;
pub mod fokker_planck;
pub mod lifted;
pub mod verdicts;

use serde::{Deserialize, Serialize};

pub use crate::dynamics::{EnsembleStats, OutcomeCount, Regression, SeriesStats, TerminalStats};
pub use drift::{drift_regression_v, DriftConfig, DriftEstimate, DriftReport, DriftTarget};
pub use fokker_planck::{
    fokker_planck_cp1, FokkerPlanckConfig, FokkerPlanckReport, FpModel, VonMisesCap,
};
pub use lifted::{
    lifted_ensemble_density, lifted_oracle, lindblad_check, lindblad_constant, pathwise_gap,
    LiftedTrajectory, LindbladFit,
};
pub use verdicts::{
    born_frequency_check, ito_isometry_check, martingale_test, supermartingale_bound,
    terminal_variance_check, Observed,
};

/// Standard-error multiplier for every band.
pub const SE_MULTIPLIER: f64 = 3.0;
/// Minimum ensemble size for martingale verdicts.
pub const MIN_MARTINGALE_ENSEMBLE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub status: Status,
    pub narrative: String,
}

impl TestVerdict {
    /// Pass iff `statistic <= threshold` (NaN fails).
    pub fn judge(name: &str, statistic: f64, threshold: f64, narrative: String) -> Self {
        let passed = statistic <= threshold;
        Self {
            name: name.into(),
            statistic,
            threshold,
            passed,
            status: if passed { Status::Pass } else { Status::Fail },
            narrative,
        }
    }

    pub fn inconclusive(name: &str, narrative: String) -> Self {
        Self::flagged(name, Status::Inconclusive, narrative)
    }

    pub fn not_applicable(name: &str, narrative: String) -> Self {
        Self::flagged(name, Status::NotApplicable, narrative)
    }

    fn flagged(name: &str, status: Status, narrative: String) -> Self {
        Self {
            name: name.into(),
            statistic: f64::NAN,
            threshold: f64::NAN,
            passed: false,
            status,
            narrative,
        }
    }

    /// Whether this verdict should fail a run; inconclusive ones only under `strict`.
    pub fn is_failure(&self, strict: bool) -> bool {
        match self.status {
            Status::Fail => true,
            Status::Inconclusive => strict,
            Status::Pass | Status::NotApplicable => false,
        }
    }
}

/// Excess over an absolute `floor`, in units of `se`; zero when within the
/// floor and infinite when positive with zero spread.
pub(crate) fn z_score(excess: f64, se: f64, floor: f64) -> f64 {
    let e = excess - floor;
    if e.is_nan() {
        f64::NAN
    } else if e <= 0.0 {
        0.0
    } else if se > 0.0 {
        e / se
    } else {
        f64::INFINITY
    }
}
