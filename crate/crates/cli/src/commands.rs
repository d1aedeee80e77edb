//! Subcommand implementations. Each returns `Ok(passed)` or an exit-2 error.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stochred_core::analysis::{
    born_frequency_check, drift_regression_v, ito_isometry_check, martingale_test,
    supermartingale_bound, terminal_variance_check, DriftConfig, DriftReport, Observed, Status,
    TestVerdict,
};
use stochred_core::config::{parse_config, ReportFormat, RunConfig};
use stochred_core::dynamics::{run_ensemble_with, EnsembleStats};
use stochred_core::geometry::checks::{geometry_report, GeometryReport, GeometryTolerances};
use stochred_core::geometry::{curvature_extremes, ChartPoint, CurvatureExtremes};
use stochred_core::observables::{
    identity_suite, IdentitySuiteReport, IdentityTolerances, ObservableFunction,
};

use crate::output::{
    ensure_dir, read_json, summary, write_json, write_timeseries, CliError, CliResult, Summary,
    SUMMARY_FILE, TIMESERIES_FILE,
};
use crate::{Common, ReplayArgs};

/// Salt separating auxiliary sampling streams from trajectory streams.
const SAMPLING_SALT: u64 = 0x0005_eed0_f5a4_d1e5;
const CURVATURE_SAMPLES: usize = 500;

fn load(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = parse_config(&c.config)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.file.output.dir = out.clone();
    }
    for n in &cfg.notes {
        info!("{n}");
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.output_dir().to_path_buf();
    ensure_dir(&dir)?;
    Ok(dir)
}

fn sampling_seed(cfg: &RunConfig) -> u64 {
    cfg.sde.master_seed ^ SAMPLING_SALT
}

fn require_curvature(cfg: &RunConfig) -> CliResult<()> {
    if cfg.kappa.is_nan() {
        return Err(CliError::Other(
            "curvature constants unavailable for this backend; run geometry-check".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct GeometryCheckReport {
    backend: String,
    geometry: GeometryReport,
    curvature: Option<CurvatureExtremes>,
    curvature_error: Option<String>,
    passed: bool,
}

pub fn geometry_check(c: &Common) -> CliResult<bool> {
    let cfg = load(c)?;
    let v = &cfg.file.verify;
    let seed = sampling_seed(&cfg);
    let geometry = geometry_report(
        &cfg.backend,
        v.geometry_samples,
        v.sample_radius,
        seed,
        &GeometryTolerances::default(),
    )?;
    let (curvature, curvature_error) =
        match curvature_extremes(&cfg.backend, &cfg.hamiltonian, CURVATURE_SAMPLES, seed) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };
    let passed = geometry.passed;
    for f in &geometry.failures {
        warn!("{f}");
    }
    info!(
        "geometry-check {}: {} samples, max |R| = {:.3e}, min metric eigenvalue = {:.3e}",
        if passed { "passed" } else { "FAILED" },
        geometry.samples,
        geometry.worst.riemann_magnitude,
        geometry.worst.min_metric_eigenvalue
    );
    let report = GeometryCheckReport {
        backend: cfg.backend.label(),
        geometry,
        curvature,
        curvature_error,
        passed,
    };
    if cfg.wants(ReportFormat::Json) {
        write_json(&out_dir(&cfg)?.join("geometry.json"), &report)?;
    }
    Ok(passed)
}

/// Tracked observable if it commutes with `H` at the initial state.
fn commuting_tracked(cfg: &RunConfig) -> CliResult<Option<&ObservableFunction>> {
    match &cfg.tracked {
        Some(f) if f.commutes_with(&cfg.hamiltonian, &cfg.initial)? => Ok(Some(f)),
        Some(_) => {
            warn!("tracked observable does not commute with H; its martingale and drift tests are not applicable");
            Ok(None)
        }
        None => Ok(None),
    }
}

fn run_identities(cfg: &RunConfig) -> CliResult<IdentitySuiteReport> {
    let v = &cfg.file.verify;
    let f = commuting_tracked(cfg)?;
    let report = identity_suite(
        &cfg.hamiltonian,
        f,
        v.identity_samples,
        v.sample_radius,
        sampling_seed(cfg),
        &IdentityTolerances::default(),
    )?;
    for f in &report.failures {
        warn!("{f}");
    }
    info!(
        "identities {}: {} samples, worst Adler–Horwitz {:.2e}, third derivative {:.2e}, Jacobi {:.2e}",
        if report.passed { "passed" } else { "FAILED" },
        report.samples,
        report.worst_adler_horwitz,
        report.worst_third_derivative,
        report.worst_jacobi
    );
    Ok(report)
}

pub fn identities(c: &Common) -> CliResult<bool> {
    let cfg = load(c)?;
    let report = run_identities(&cfg)?;
    if cfg.wants(ReportFormat::Json) {
        write_json(&out_dir(&cfg)?.join("identities.json"), &report)?;
    }
    Ok(report.passed)
}

fn run_simulation(
    cfg: &RunConfig,
    threads: Option<usize>,
    dir: &Path,
) -> CliResult<(EnsembleStats, Summary)> {
    require_curvature(cfg)?;
    let f = commuting_tracked(cfg)?;
    info!(
        "simulating {} trajectories: sigma = {}, dt = {:.3e}, horizon = {:.4}, seed = {}",
        cfg.sde.ensemble_size, cfg.sde.sigma, cfg.sde.dt, cfg.sde.horizon, cfg.sde.master_seed
    );
    let stats = run_ensemble_with(&cfg.hamiltonian, &cfg.initial, &cfg.sde, f, threads)?;
    let s = summary(cfg, &stats);
    if cfg.wants(ReportFormat::Csv) {
        write_timeseries(&dir.join(TIMESERIES_FILE), &stats)?;
    }
    if cfg.wants(ReportFormat::Json) {
        write_json(&dir.join(SUMMARY_FILE), &s)?;
    }
    if !stats.valid {
        warn!(
            "ensemble invalid: {} of {} trajectories blew up (indices {:?})",
            stats.blow_ups.len(),
            stats.ensemble_size,
            stats.blow_ups
        );
    }
    info!(
        "{}; unresolved {:.2}%",
        s.reduction,
        100.0 * s.unresolved_fraction
    );
    for o in &s.outcomes {
        info!(
            "  outcome {:?} (E = {:.6}): frequency {:.4}, Born {}",
            o.eigenspaces,
            o.eigenvalue,
            o.frequency,
            o.born.map_or("n/a".into(), |b| format!("{b:.4}"))
        );
    }
    Ok((stats, s))
}

pub fn simulate(c: &Common) -> CliResult<bool> {
    let cfg = load(c)?;
    let dir = out_dir(&cfg)?;
    let (stats, _) = run_simulation(&cfg, c.threads, &dir)?;
    Ok(stats.valid)
}

#[derive(Serialize)]
struct VerifyReport {
    strict: bool,
    identities: IdentitySuiteReport,
    verdicts: Vec<TestVerdict>,
    drift_v: DriftReport,
    drift_vf: Option<DriftReport>,
    warnings: Vec<String>,
    passed: bool,
}

fn drift_starts(cfg: &RunConfig) -> Vec<ChartPoint> {
    let v = &cfg.file.verify;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling_seed(cfg).wrapping_add(1));
    let mut starts = vec![cfg.initial.clone()];
    while starts.len() < v.drift_starts {
        let mut p = cfg.backend.sample_point_within(&mut rng, v.sample_radius);
        cfg.backend.normalize_chart(&mut p);
        starts.push(p);
    }
    starts
}

pub fn verify(c: &Common) -> CliResult<bool> {
    let cfg = load(c)?;
    let dir = out_dir(&cfg)?;
    let identities = run_identities(&cfg)?;
    let (stats, _) = run_simulation(&cfg, c.threads, &dir)?;

    let mut verdicts = vec![
        martingale_test(&stats, Observed::H),
        martingale_test(&stats, Observed::F),
    ];
    if cfg.tracked.is_some() && stats.f.is_none() {
        let v = verdicts.last_mut().expect("pushed");
        v.narrative = "tracked F does not commute with H".into();
    }
    verdicts.push(supermartingale_bound(&stats, cfg.kappa));
    verdicts.push(ito_isometry_check(&stats));
    verdicts.push(terminal_variance_check(&stats, cfg.kappa, cfg.lambda));
    verdicts.push(born_frequency_check(&stats));

    let v = &cfg.file.verify;
    let drift_cfg = DriftConfig {
        sigma: cfg.sde.sigma,
        dt: v.drift_dt.unwrap_or(cfg.sde.dt),
        steps: v.drift_steps,
        samples: v.drift_samples,
        master_seed: cfg.sde.master_seed.wrapping_add(SAMPLING_SALT),
        scheme: cfg.sde.scheme,
        threads: c.threads,
    };
    let starts = drift_starts(&cfg);
    let drift_v = drift_regression_v(&cfg.hamiltonian, &starts, None, &drift_cfg)?;
    verdicts.push(drift_v.verdict.clone());
    let drift_vf = match &cfg.tracked {
        Some(f) => {
            let r = drift_regression_v(&cfg.hamiltonian, &starts, Some(f), &drift_cfg)?;
            verdicts.push(r.verdict.clone());
            Some(r)
        }
        None => {
            verdicts.push(TestVerdict::not_applicable(
                "drift_VF",
                "no tracked observable".into(),
            ));
            None
        }
    };

    let mut warnings = Vec::new();
    if !stats.valid {
        warnings.push(format!(
            "ensemble invalid: {} blow-ups",
            stats.blow_ups.len()
        ));
    }
    for v in &verdicts {
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
            Status::NotApplicable => "N/A",
        };
        let line = format!("{tag:<12} {:<18} {}", v.name, v.narrative);
        println!("{line}");
        if v.status == Status::Inconclusive {
            warnings.push(format!("{}: {}", v.name, v.narrative));
        }
    }
    println!(
        "{:<12} {:<18} {} samples",
        if identities.passed { "PASS" } else { "FAIL" },
        "identities",
        identities.samples
    );
    for w in &warnings {
        warn!("{w}");
    }
    let passed =
        identities.passed && stats.valid && !verdicts.iter().any(|v| v.is_failure(c.strict));
    let report = VerifyReport {
        strict: c.strict,
        identities,
        verdicts,
        drift_v,
        drift_vf,
        warnings,
        passed,
    };
    if cfg.wants(ReportFormat::Json) {
        write_json(&dir.join("verdicts.json"), &report)?;
    }
    Ok(passed)
}

pub fn replay(r: &ReplayArgs) -> CliResult<bool> {
    let mut cfg = load(&Common {
        out: None,
        ..r.common.clone()
    })?;
    let summary_path = r
        .summary
        .clone()
        .unwrap_or_else(|| cfg.output_dir().join(SUMMARY_FILE));
    let recorded: Summary = read_json(&summary_path)?;
    let source_dir = summary_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    cfg = cfg.with_seed(recorded.seeds.master_seed);
    let dir = r
        .common
        .out
        .clone()
        .unwrap_or_else(|| source_dir.join("replay"));
    ensure_dir(&dir)?;
    info!(
        "replaying seed {} into {}",
        recorded.seeds.master_seed,
        dir.display()
    );
    run_simulation(&cfg, r.common.threads, &dir)?;

    let mut identical = true;
    for name in [TIMESERIES_FILE, SUMMARY_FILE] {
        let (a, b) = (source_dir.join(name), dir.join(name));
        if !a.exists() {
            continue;
        }
        let same = fs::read(&a).map_err(|e| CliError::Io {
            path: a.clone(),
            source: e,
        })? == fs::read(&b).map_err(|e| CliError::Io {
            path: b.clone(),
            source: e,
        })?;
        if same {
            info!("{name}: byte-identical");
        } else {
            warn!("{name}: differs from the recorded run");
        }
        identical &= same;
    }
    Ok(identical)
}
