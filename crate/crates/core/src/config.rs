//! Scenario files: one TOML document per run, parsed strictly.
//!
//! ```toml
//! [backend]
//! kind = "cpn"
//! n = 1
//!
//! [hamiltonian]
//! diagonal = [0.0, 1.0]
//!
//! [initial]
//! chart = 0
//! coords = [1.0, 0.0]
//!
//! [sde]
//! sigma = 0.5
//! horizon_tau = 5.0
//! ensemble_size = 1000
//! master_seed = 7
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{curvature_constants, default_dt, reduction_time, Scheme, SdeConfig};
use crate::error::Error;
use crate::geometry::{ChartPoint, GeometryBackend, KahlerPotential, PotentialTerm};
use crate::observables::{ComplexRows, HermitianOperator, ObservableFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigErrorKind {
    MissingFile,
    Syntax,
    UnknownKey,
    NonHermitian,
    DimensionMismatch,
    Invalid,
}

impl ConfigErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            Self::MissingFile => "E-CFG-001",
            Self::Syntax => "E-CFG-002",
            Self::UnknownKey => "E-CFG-003",
            Self::NonHermitian => "E-CFG-004",
            Self::DimensionMismatch => "E-CFG-005",
            Self::Invalid => "E-CFG-006",
        }
    }
}

#[derive(Debug)]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub message: String,
}

impl ConfigError {
    fn new(kind: ConfigErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(ConfigErrorKind::Invalid, message)
    }

    /// Wraps a library error raised while building `field`.
    fn at(field: &str, e: Error) -> Self {
        let kind = match e {
            Error::NonHermitian { .. } => ConfigErrorKind::NonHermitian,
            Error::DimensionMismatch { .. } => ConfigErrorKind::DimensionMismatch,
            _ => ConfigErrorKind::Invalid,
        };
        Self::new(kind, format!("{field}: {e}"))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.kind.code(), self.message)
    }
}

impl std::error::Error for ConfigError {}

// ---------------------------------------------------------------------------
// File schema

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub backend: BackendSpec,
    pub hamiltonian: ObservableSpec,
    #[serde(default)]
    pub tracked: Option<ObservableSpec>,
    pub initial: InitialSpec,
    pub sde: SdeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    #[serde(alias = "projective")]
    Cpn {
        n: usize,
    },
    Product {
        factors: Vec<usize>,
    },
    Potential {
        dimension: usize,
        terms: Vec<PotentialTerm>,
    },
}

/// Exactly one of the fields must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    /// Dense matrix, rows of `[re, im]` entries.
    #[serde(default)]
    pub matrix: Option<ComplexRows>,
    /// Real diagonal matrix.
    #[serde(default)]
    pub diagonal: Option<Vec<f64>>,
    /// One operator per product factor.
    #[serde(default)]
    pub factors: Option<Vec<FactorSpec>>,
    /// Rotation generator `Σ w_k |z_k|²`-type observable on a potential backend.
    #[serde(default)]
    pub moment_map: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    #[serde(default)]
    pub matrix: Option<ComplexRows>,
    #[serde(default)]
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub chart: Option<usize>,
    #[serde(default)]
    pub coords: Option<Vec<f64>>,
    /// One homogeneous vector (entries `[re, im]`) per projective factor.
    #[serde(default)]
    pub homogeneous: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSpec {
    pub sigma: f64,
    /// Defaults to `min(0.01/‖H‖, τ/10⁴)`.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Absolute horizon; exclusive with `horizon_tau`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Horizon in units of the reduction time τ.
    #[serde(default)]
    pub horizon_tau: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub collapse_epsilon: Option<f64>,
    #[serde(default)]
    pub collapse_hold_steps: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    pub ensemble_size: usize,
    #[serde(default)]
    pub record_stride: Option<usize>,
    #[serde(default)]
    pub early_stop: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Json]
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

/// Sizes of the checks run by `verify`, `identities` and `geometry-check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub identity_samples: usize,
    pub geometry_samples: usize,
    pub sample_radius: f64,
    pub drift_starts: usize,
    pub drift_samples: usize,
    pub drift_steps: usize,
    /// Restart step for drift estimates; defaults to the run's dt.
    pub drift_dt: Option<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            identity_samples: 100,
            geometry_samples: 50,
            sample_radius: 2.0,
            drift_starts: 5,
            drift_samples: 4000,
            drift_steps: 20,
            drift_dt: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Validated configuration

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub source: Option<PathBuf>,
    pub file: ConfigFile,
    pub backend: Arc<GeometryBackend>,
    pub hamiltonian: ObservableFunction,
    pub tracked: Option<ObservableFunction>,
    pub initial: ChartPoint,
    pub sde: SdeConfig,
    pub kappa: f64,
    pub lambda: f64,
    pub v0: f64,
    /// Infinite when `κσ²V₀` vanishes or `κ` is unavailable.
    pub tau: f64,
    /// Defaults applied and adjustments made while validating.
    pub notes: Vec<String>,
}

impl RunConfig {
    /// Replaces the master seed, keeping everything else.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sde.master_seed = seed;
        self.file.sde.master_seed = seed;
        self
    }

    pub fn output_dir(&self) -> &Path {
        &self.file.output.dir
    }

    pub fn wants(&self, format: ReportFormat) -> bool {
        self.file.output.formats.contains(&format)
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::new(
            ConfigErrorKind::MissingFile,
            format!("{}: {e}", path.display()),
        )
    })?;
    let mut cfg = parse_config_str(&text)?;
    cfg.source = Some(path.to_path_buf());
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let kind =
            if e.message().contains("unknown field") || e.message().contains("unknown variant") {
                ConfigErrorKind::UnknownKey
            } else {
                ConfigErrorKind::Syntax
            };
        let location = e
            .span()
            .map(|s| {
                let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}: ")
            })
            .unwrap_or_default();
        ConfigError::new(kind, format!("{location}{}", e.message()))
    })?;
    build(file)
}

fn build(file: ConfigFile) -> Result<RunConfig, ConfigError> {
    let mut notes = Vec::new();
    let backend = Arc::new(build_backend(&file.backend)?);
    let hamiltonian = build_observable(&backend, &file.hamiltonian, "hamiltonian")?;
    let tracked = match &file.tracked {
        Some(spec) => Some(build_observable(&backend, spec, "tracked")?),
        None => None,
    };
    let initial = build_initial(&backend, &file.initial, &mut notes)?;

    let s = &file.sde;
    if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
        return Err(ConfigError::invalid(format!(
            "sde.sigma must be finite and ≥ 0, got {}",
            s.sigma
        )));
    }
    if s.ensemble_size == 0 {
        return Err(ConfigError::invalid("sde.ensemble_size must be positive"));
    }
    // A broken geometry must still reach `geometry-check`, so curvature
    // failures are recorded instead of rejected here.
    let (kappa, lambda) = match curvature_constants(&hamiltonian, s.master_seed) {
        Ok(kl) => kl,
        Err(e) => {
            notes.push(format!("curvature constants unavailable: {e}"));
            (f64::NAN, f64::NAN)
        }
    };
    let v0 = hamiltonian
        .dispersion(&initial)
        .map_err(|e| ConfigError::at("initial", e))?;
    let tau = reduction_time(kappa, s.sigma, v0);

    let dt = match s.dt {
        Some(dt) => dt,
        None => {
            let dt = default_dt(hamiltonian.scale(), kappa, s.sigma, v0);
            notes.push(format!("dt not given; using default {dt:.3e}"));
            dt
        }
    };
    let horizon = match (s.horizon, s.horizon_tau) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::invalid("sde.horizon and sde.horizon_tau are mutually exclusive"))
        }
        (Some(h), None) => h,
        (None, Some(m)) if tau.is_finite() => m * tau,
        (None, Some(_)) => {
            return Err(ConfigError::invalid(
                "sde.horizon_tau needs a finite reduction time (σ > 0 and V₀ > 0); give sde.horizon instead",
            ))
        }
        (None, None) => return Err(ConfigError::invalid("sde.horizon or sde.horizon_tau is required")),
    };
    let mut sde = SdeConfig::new(s.sigma, dt, horizon, s.master_seed, s.ensemble_size);
    sde.scheme = s.scheme;
    sde.collapse_epsilon = s.collapse_epsilon;
    if let Some(h) = s.collapse_hold_steps {
        sde.collapse_hold_steps = h;
    }
    sde.record_stride = s.record_stride;
    if let Some(e) = s.early_stop {
        sde.early_stop = e;
    }
    sde.validate().map_err(|e| ConfigError::at("sde", e))?;
    if dt > horizon {
        return Err(ConfigError::invalid(format!(
            "sde.dt = {dt} exceeds the horizon {horizon}"
        )));
    }

    let v = &file.verify;
    if v.drift_starts == 0 || v.drift_samples < 2 || v.drift_steps == 0 || !(v.sample_radius > 0.0)
    {
        return Err(ConfigError::invalid(
            "verify: drift_starts ≥ 1, drift_samples ≥ 2, drift_steps ≥ 1 and sample_radius > 0 required",
        ));
    }
    if file.output.formats.is_empty() {
        return Err(ConfigError::invalid("output.formats must not be empty"));
    }

    Ok(RunConfig {
        source: None,
        file,
        backend,
        hamiltonian,
        tracked,
        initial,
        sde,
        kappa,
        lambda,
        v0,
        tau,
        notes,
    })
}

fn build_backend(spec: &BackendSpec) -> Result<GeometryBackend, ConfigError> {
    match spec {
        BackendSpec::Cpn { n } => GeometryBackend::projective(*n),
        BackendSpec::Product { factors } => GeometryBackend::product(factors.clone()),
        BackendSpec::Potential { dimension, terms } => {
            GeometryBackend::potential(KahlerPotential {
                dimension: *dimension,
                terms: terms.clone(),
            })
        }
    }
    .map_err(|e| ConfigError::at("backend", e))
}

fn operator(
    matrix: &Option<ComplexRows>,
    diagonal: &Option<Vec<f64>>,
    field: &str,
) -> Result<HermitianOperator, ConfigError> {
    match (matrix, diagonal) {
        (Some(rows), None) => {
            if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
                return Err(ConfigError::new(
                    ConfigErrorKind::DimensionMismatch,
                    format!("{field}.matrix must be square"),
                ));
            }
            HermitianOperator::from_rows(rows)
                .map_err(|e| ConfigError::at(&format!("{field}.matrix"), e))
        }
        (None, Some(d)) if !d.is_empty() && d.iter().all(|v| v.is_finite()) => {
            Ok(HermitianOperator::diagonal(d))
        }
        (None, Some(_)) => Err(ConfigError::invalid(format!(
            "{field}.diagonal must be non-empty and finite"
        ))),
        _ => Err(ConfigError::invalid(format!(
            "{field}: give exactly one of `matrix` or `diagonal`"
        ))),
    }
}

fn build_observable(
    backend: &Arc<GeometryBackend>,
    spec: &ObservableSpec,
    field: &str,
) -> Result<ObservableFunction, ConfigError> {
    let given = [
        spec.matrix.is_some(),
        spec.diagonal.is_some(),
        spec.factors.is_some(),
        spec.moment_map.is_some(),
    ];
    if given.iter().filter(|&&g| g).count() != 1 {
        return Err(ConfigError::invalid(format!(
            "{field}: give exactly one of `matrix`, `diagonal`, `factors` or `moment_map`"
        )));
    }
    let built = if let Some(factors) = &spec.factors {
        let ops = factors
            .iter()
            .enumerate()
            .map(|(k, f)| operator(&f.matrix, &f.diagonal, &format!("{field}.factors[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        ObservableFunction::separable(backend.clone(), ops)
    } else if let Some(w) = &spec.moment_map {
        ObservableFunction::moment_map(backend.clone(), w.clone())
    } else {
        ObservableFunction::linear(
            backend.clone(),
            operator(&spec.matrix, &spec.diagonal, field)?,
        )
    };
    built.map_err(|e| ConfigError::at(field, e))
}

fn build_initial(
    backend: &GeometryBackend,
    spec: &InitialSpec,
    notes: &mut Vec<String>,
) -> Result<ChartPoint, ConfigError> {
    match (&spec.coords, &spec.homogeneous) {
        (Some(coords), None) => {
            let chart = spec.chart.unwrap_or(0);
            let p = backend
                .point(chart, coords.clone())
                .map_err(|e| ConfigError::at("initial", e))?;
            if backend.factors().is_empty() {
                return Ok(p);
            }
            // Re-project into the chart of the largest homogeneous component.
            let best = backend
                .from_homogeneous(&backend.homogeneous(&p))
                .map_err(|e| ConfigError::at("initial", e))?;
            if best.chart != p.chart {
                notes.push(format!(
                    "initial state moved from chart {} to chart {} (largest homogeneous component)",
                    p.chart, best.chart
                ));
            }
            Ok(best)
        }
        (None, Some(vectors)) => {
            if spec.chart.is_some() {
                return Err(ConfigError::invalid(
                    "initial.chart cannot be combined with initial.homogeneous",
                ));
            }
            let psis: Vec<Vec<Complex64>> = vectors
                .iter()
                .map(|v| v.iter().map(|c| Complex64::new(c[0], c[1])).collect())
                .collect();
            if psis
                .iter()
                .flatten()
                .any(|c| !c.re.is_finite() || !c.im.is_finite())
            {
                return Err(ConfigError::invalid(
                    "initial.homogeneous entries must be finite",
                ));
            }
            backend
                .from_homogeneous(&psis)
                .map_err(|e| ConfigError::at("initial.homogeneous", e))
        }
        _ => Err(ConfigError::invalid(
            "initial: give exactly one of `coords` or `homogeneous`",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[backend]
kind = "cpn"
n = 1

[hamiltonian]
diagonal = [0.0, 1.0]

[initial]
coords = [1.0, 0.0]

[sde]
sigma = 0.5
horizon_tau = 5.0
ensemble_size = 10
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert!((c.v0 - 0.25).abs() < 1e-12);
        assert!((c.tau - 16.0).abs() < 1e-9);
        assert!((c.sde.dt - 0.01f64.min(16.0 / 1e4)).abs() < 1e-15);
        assert!((c.sde.horizon - 80.0).abs() < 1e-9);
        assert_eq!(c.file.output, OutputSpec::default());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replace("sigma = 0.5", "sigma = 0.5\nsigmaa = 1.0");
        let e = parse_config_str(&text).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::UnknownKey);
        assert!(e.message.contains("line"), "{e}");
    }

    #[test]
    fn non_hermitian_names_the_entry() {
        let text = MINIMAL.replace(
            "diagonal = [0.0, 1.0]",
            "matrix = [[[0.0, 0.0], [1.0, 0.0]], [[2.0, 0.0], [1.0, 0.0]]]",
        );
        let e = parse_config_str(&text).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::NonHermitian);
        assert!(
            e.message.contains("(0, 1)") || e.message.contains("(1, 0)"),
            "{e}"
        );
    }

    #[test]
    fn dimension_mismatch_and_syntax_have_distinct_codes() {
        let text = MINIMAL.replace("diagonal = [0.0, 1.0]", "diagonal = [0.0, 1.0, 2.0]");
        let e = parse_config_str(&text).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::DimensionMismatch);
        let e = parse_config_str("[backend\nkind=").unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::Syntax);
        let e = parse_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert_eq!(e.kind, ConfigErrorKind::MissingFile);
        let codes: std::collections::HashSet<_> = [
            ConfigErrorKind::MissingFile,
            ConfigErrorKind::Syntax,
            ConfigErrorKind::UnknownKey,
            ConfigErrorKind::NonHermitian,
            ConfigErrorKind::DimensionMismatch,
            ConfigErrorKind::Invalid,
        ]
        .iter()
        .map(|k| k.code())
        .collect();
        assert_eq!(codes.len(), 6);
    }

    #[test]
    fn large_coordinates_trigger_chart_selection() {
        let text = MINIMAL.replace("coords = [1.0, 0.0]", "coords = [4.0, 0.0]");
        let c = parse_config_str(&text).unwrap();
        assert_eq!(c.initial.chart, 1);
        assert!((c.initial.coords[0] - 0.25).abs() < 1e-12);
        assert!(c.notes.iter().any(|n| n.contains("chart")));
    }

    #[test]
    fn zero_sigma_needs_absolute_horizon() {
        let text = MINIMAL.replace("sigma = 0.5", "sigma = 0.0");
        assert_eq!(
            parse_config_str(&text).unwrap_err().kind,
            ConfigErrorKind::Invalid
        );
        let text = text.replace("horizon_tau = 5.0", "horizon = 2.0");
        let c = parse_config_str(&text).unwrap();
        assert!(c.tau.is_infinite());
    }
}
