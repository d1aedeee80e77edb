//! Artifact writers and the run summary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochred_core::config::{ConfigError, RunConfig};
use stochred_core::dynamics::{EnsembleStats, OutcomeCount, Scheme, TerminalStats};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_HEADER: [&str; 7] = ["t", "mean_H", "se_H", "mean_V", "se_V", "mean_Q", "bound_V"];

/// Failures that map to exit status 2.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Core(stochred_core::Error),
    Other(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Io { path, source } => write!(f, "[E-IO] {}: {source}", path.display()),
            Self::Core(e) => write!(f, "[E-RUN] {e}"),
            Self::Other(m) => write!(f, "[E-RUN] {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<stochred_core::Error> for CliError {
    fn from(e: stochred_core::Error) -> Self {
        Self::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

/// Time-series CSV with the fixed column set.
pub fn write_timeseries(path: &Path, stats: &EnsembleStats) -> CliResult<()> {
    let csv_err = |e: csv::Error| CliError::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let kappa = if stats.kappa.is_finite() {
        stats.kappa
    } else {
        0.0
    };
    let bound = stats.bound_v(kappa);
    for (i, &b) in bound.iter().enumerate() {
        let row = [
            stats.times[i],
            stats.h.mean[i],
            stats.h.se[i],
            stats.v.mean[i],
            stats.v.se[i],
            stats.q.mean[i],
            b,
        ];
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    /// How per-trajectory streams derive from the master seed.
    pub stream_rule: String,
}

/// Everything needed to interpret and replay a simulation. Contains no
/// timestamps or thread counts, so it is byte-stable across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: Option<PathBuf>,
    pub backend: String,
    pub seeds: SeedRecord,
    pub sigma: f64,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub ensemble_size: usize,
    pub completed: usize,
    pub blow_ups: Vec<usize>,
    pub valid: bool,
    pub h0: f64,
    pub v0: f64,
    pub kappa: f64,
    pub lambda: f64,
    /// `(κσ²V₀)^{-1}`; `null` when infinite.
    pub tau: Option<f64>,
    pub reduction: String,
    pub outcomes: Vec<OutcomeCount>,
    pub unresolved: usize,
    pub unresolved_fraction: f64,
    pub terminal: TerminalStats,
    pub final_mean_v: f64,
    pub min_v: f64,
    pub q_monotone: bool,
    pub notes: Vec<String>,
}

pub fn summary(cfg: &RunConfig, stats: &EnsembleStats) -> Summary {
    let reduction = if cfg.sde.sigma == 0.0 {
        "no reduction expected (sigma = 0)".to_string()
    } else if stats.v0 == 0.0 {
        "no reduction expected (initial state is an eigenstate)".to_string()
    } else {
        "reduction expected".to_string()
    };
    Summary {
        config: cfg.source.clone(),
        backend: cfg.backend.label(),
        seeds: SeedRecord {
            master_seed: cfg.sde.master_seed,
            stream_rule: "ChaCha8 seeded by master_seed, stream id = trajectory index".into(),
        },
        sigma: cfg.sde.sigma,
        dt: cfg.sde.dt,
        horizon: cfg.sde.horizon,
        scheme: cfg.sde.scheme,
        ensemble_size: stats.ensemble_size,
        completed: stats.completed,
        blow_ups: stats.blow_ups.clone(),
        valid: stats.valid,
        h0: stats.h0,
        v0: stats.v0,
        kappa: stats.kappa,
        lambda: stats.lambda,
        tau: Some(stats.tau).filter(|t| t.is_finite()),
        reduction,
        outcomes: stats.outcomes.clone(),
        unresolved: stats.unresolved,
        unresolved_fraction: stats.unresolved_fraction(),
        terminal: stats.terminal.clone(),
        final_mean_v: stats.v.mean.last().copied().unwrap_or(f64::NAN),
        min_v: stats.min_v,
        q_monotone: stats.q_monotone,
        notes: cfg.notes.clone(),
    }
}
