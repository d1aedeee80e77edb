use serde::{Deserialize, Serialize};

use super::sde::{Integrator, LocalState};
use super::{NoisePath, SdeConfig};
use crate::error::{Error, Result};
use crate::geometry::{sectional_curvature_h, BackendKind, ChartPoint, GeometryBackend};
use crate::observables::{ObservableFunction, Spectrum};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseLabel {
    /// Eigenspace index in each factor's spectrum; empty for custom observables.
    pub eigenspaces: Vec<usize>,
    /// Eigenvalue of the labelled eigenspace (sum over factors), or the value
    /// of a custom observable at the collapse point.
    pub eigenvalue: f64,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Collapsed(CollapseLabel),
    Unresolved,
}

impl Outcome {
    pub fn label(&self) -> Option<&CollapseLabel> {
        match self {
            Outcome::Collapsed(l) => Some(l),
            Outcome::Unresolved => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Recorded states; empty when the caller asked for scalars only.
    pub points: Vec<ChartPoint>,
    pub h_series: Vec<f64>,
    pub v_series: Vec<f64>,
    pub f_series: Option<Vec<f64>>,
    pub vf_series: Option<Vec<f64>>,
    /// `Q_t = ∫₀ᵗ V_s² ds`, trapezoidal in the step size.
    pub q_series: Vec<f64>,
    /// `K_H(x_t) V_t²`, the curvature-weighted squared dispersion.
    pub kv2_series: Vec<f64>,
    pub outcome: Outcome,
    pub final_point: ChartPoint,
    pub steps_taken: usize,
    pub chart_switches: usize,
}

/// Nearest eigenspace of each factor by projector expectation.
pub fn label_state(
    h: &ObservableFunction,
    p: &ChartPoint,
    spectra: Option<&[Spectrum]>,
    time: f64,
) -> Result<CollapseLabel> {
    match spectra {
        Some(spectra) => {
            let psis = h.backend().homogeneous(p);
            let eigenspaces: Vec<usize> = spectra
                .iter()
                .zip(&psis)
                .map(|(s, psi)| s.nearest(psi))
                .collect();
            let eigenvalue = spectra
                .iter()
                .zip(&eigenspaces)
                .map(|(s, &i)| s.eigenvalues[i])
                .sum();
            Ok(CollapseLabel {
                eigenspaces,
                eigenvalue,
                time,
            })
        }
        None => Ok(CollapseLabel {
            eigenspaces: Vec::new(),
            eigenvalue: h.expectation(p)?,
            time,
        }),
    }
}

/// Collapse from a recorded trajectory: `V < ε` on `hold_steps` consecutive
/// records, labelled by the nearest eigenspace at the confirming record.
pub fn detect_collapse(
    traj: &Trajectory,
    h: &ObservableFunction,
    spectra: &[Spectrum],
    epsilon: f64,
    hold_steps: usize,
) -> Result<Outcome> {
    let mut run = 0;
    for (i, &v) in traj.v_series.iter().enumerate() {
        run = if v < epsilon { run + 1 } else { 0 };
        if run >= hold_steps.max(1) {
            let p = traj.points.get(i).unwrap_or(&traj.final_point);
            return Ok(Outcome::Collapsed(label_state(
                h,
                p,
                Some(spectra),
                traj.times[i],
            )?));
        }
    }
    Ok(Outcome::Unresolved)
}

/// Shared per-run setup for single trajectories and ensembles.
pub(crate) struct Runner<'a> {
    pub integrator: Integrator,
    pub spectra: Option<Vec<Spectrum>>,
    pub track_f: Option<&'a ObservableFunction>,
    pub config: &'a SdeConfig,
    pub record: Vec<usize>,
}

impl<'a> Runner<'a> {
    pub fn new(
        h: &ObservableFunction,
        config: &'a SdeConfig,
        track_f: Option<&'a ObservableFunction>,
        x0: &ChartPoint,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(f) = track_f {
            if f.backend().id() != h.backend().id() {
                return Err(Error::Configuration(
                    "tracked observable lives on a different backend".into(),
                ));
            }
            if !f.commutes_with(h, x0)? {
                return Err(Error::Configuration(
                    "tracked observable does not commute with the Hamiltonian".into(),
                ));
            }
        }
        Ok(Self {
            integrator: Integrator::new(h, config.sigma, config.dt, config.scheme)?,
            spectra: h.spectra()?,
            track_f,
            config,
            record: config.record_steps(),
        })
    }

    fn h(&self) -> &ObservableFunction {
        self.integrator.observable()
    }

    fn kv2(&self, p: &ChartPoint, s: &LocalState) -> Result<f64> {
        match self.h().backend().kind() {
            BackendKind::Potential(_) => {
                if s.v <= 1e-24 {
                    return Ok(0.0);
                }
                let grad = self.h().gradient(p)?;
                Ok(sectional_curvature_h(self.h().backend(), p, &grad)? * s.v * s.v)
            }
            _ => Ok(s.curvature_weighted_v2()),
        }
    }

    pub fn run(&self, x0: &ChartPoint, noise: &[f64], keep_points: bool) -> Result<Trajectory> {
        let steps = self.config.steps();
        if noise.len() != steps {
            return Err(Error::Configuration(format!(
                "noise path has {} increments, the horizon needs {steps}",
                noise.len()
            )));
        }
        let h = self.h();
        let backend: &GeometryBackend = h.backend();
        backend.validate(x0)?;
        let mut p = x0.clone();
        backend.normalize_chart(&mut p);
        let dt = self.config.dt;
        let mut state = self.integrator.local(&p)?;
        let eps = self.config.collapse_threshold(state.v, h.scale());
        let hold = self.config.collapse_hold_steps;

        let n_rec = self.record.len();
        let mut traj = Trajectory {
            times: self.record.iter().map(|&k| k as f64 * dt).collect(),
            points: Vec::with_capacity(if keep_points { n_rec } else { 0 }),
            h_series: Vec::with_capacity(n_rec),
            v_series: Vec::with_capacity(n_rec),
            f_series: self.track_f.map(|_| Vec::with_capacity(n_rec)),
            vf_series: self.track_f.map(|_| Vec::with_capacity(n_rec)),
            q_series: Vec::with_capacity(n_rec),
            kv2_series: Vec::with_capacity(n_rec),
            outcome: Outcome::Unresolved,
            final_point: p.clone(),
            steps_taken: 0,
            chart_switches: 0,
        };
        let mut q = 0.0;
        let push = |traj: &mut Trajectory, p: &ChartPoint, s: &LocalState, q: f64| -> Result<()> {
            if keep_points {
                traj.points.push(p.clone());
            }
            traj.h_series.push(s.h);
            traj.v_series.push(s.v);
            traj.q_series.push(q);
            traj.kv2_series.push(self.kv2(p, s)?);
            if let Some(f) = self.track_f {
                traj.f_series
                    .as_mut()
                    .expect("tracked")
                    .push(f.expectation(p)?);
                traj.vf_series
                    .as_mut()
                    .expect("tracked")
                    .push(f.dispersion(p)?);
            }
            Ok(())
        };

        push(&mut traj, &p, &state, q)?;
        let mut next_record = 1;
        let mut below = usize::from(state.v < eps);
        let mut collapsed_at: Option<usize> = (below >= hold).then_some(0);
        let mut k = 0;
        while k < steps && !(collapsed_at.is_some() && self.config.early_stop) {
            let next = self.integrator.advance(&p, &state, noise[k], k)?;
            if next.chart != p.chart {
                traj.chart_switches += 1;
            }
            let next_state = self.integrator.local(&next)?;
            q += 0.5 * (state.v * state.v + next_state.v * next_state.v) * dt;
            p = next;
            state = next_state;
            k += 1;
            below = if state.v < eps { below + 1 } else { 0 };
            if collapsed_at.is_none() && below >= hold {
                collapsed_at = Some(k);
            }
            if next_record < n_rec && self.record[next_record] == k {
                push(&mut traj, &p, &state, q)?;
                next_record += 1;
            }
        }
        // Frozen terminal values after an early stop keep the time grid aligned.
        while traj.h_series.len() < n_rec {
            push(&mut traj, &p, &state, q)?;
        }
        traj.steps_taken = k;
        if let Some(c) = collapsed_at {
            traj.outcome =
                Outcome::Collapsed(label_state(h, &p, self.spectra.as_deref(), c as f64 * dt)?);
        }
        traj.final_point = p;
        Ok(traj)
    }
}

/// Integrates one path of the reduction SDE under `noise`.
pub fn simulate_trajectory(
    h: &ObservableFunction,
    x0: &ChartPoint,
    config: &SdeConfig,
    noise: &NoisePath,
    track_f: Option<&ObservableFunction>,
) -> Result<Trajectory> {
    if (noise.dt - config.dt).abs() > 1e-15 * config.dt {
        return Err(Error::Configuration(format!(
            "noise step {} differs from dt {}",
            noise.dt, config.dt
        )));
    }
    Runner::new(h, config, track_f, x0)?.run(x0, &noise.increments, true)
}
