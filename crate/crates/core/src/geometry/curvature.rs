use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChartPoint, GeometryBackend, MetricTensors, Riemann};
use crate::error::{Error, Result};
use crate::linalg::{bilinear, mat_vec_real};
use crate::observables::ObservableFunction;

/// Gradients with g-norm below this span no plane.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;

fn raised_pair(m: &MetricTensors, grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let x = m.raise(grad);
    let norm_sq = bilinear(&m.g, &x, &x);
    if !(norm_sq.sqrt() >= DEGENERATE_GRADIENT) {
        return Err(Error::DegeneratePlane {
            norm: norm_sq.max(0.0).sqrt(),
            threshold: DEGENERATE_GRADIENT,
        });
    }
    let jx = mat_vec_real(&m.j, &x);
    Ok((x, jx, norm_sq))
}

/// Holomorphic sectional curvature of the plane spanned by `∇^a H` and `J∇^a H`,
/// from precomputed tensors.
pub fn holomorphic_sectional(m: &MetricTensors, r: &Riemann, grad_h: &[f64]) -> Result<f64> {
    let (x, jx, n2) = raised_pair(m, grad_h)?;
    Ok(-r.contract4(&x, &jx, &x, &jx) / (n2 * n2))
}

/// Holomorphic bisectional curvature pairing the J-invariant planes of two gradients.
pub fn holomorphic_bisectional(
    m: &MetricTensors,
    r: &Riemann,
    grad_f: &[f64],
    grad_h: &[f64],
) -> Result<f64> {
    let (xf, jxf, nf) = raised_pair(m, grad_f)?;
    let (xh, jxh, nh) = raised_pair(m, grad_h)?;
    Ok(-r.contract4(&xf, &jxf, &xh, &jxh) / (nf * nh))
}

pub fn sectional_curvature_h(
    backend: &GeometryBackend,
    p: &ChartPoint,
    grad_h: &[f64],
) -> Result<f64> {
    let m = backend.metric_at(p)?;
    let r = backend.riemann_at(p)?;
    holomorphic_sectional(&m, &r, grad_h)
}

pub fn bisectional_curvature_fh(
    backend: &GeometryBackend,
    p: &ChartPoint,
    grad_f: &[f64],
    grad_h: &[f64],
) -> Result<f64> {
    let m = backend.metric_at(p)?;
    let r = backend.riemann_at(p)?;
    holomorphic_bisectional(&m, &r, grad_f, grad_h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureExtremes {
    /// Infimum of the holomorphic sectional curvature along `∇H`.
    pub kappa: f64,
    /// Supremum of the same.
    pub lambda: f64,
    pub samples_used: usize,
    /// True when the constants are exact rather than sampled.
    pub analytic: bool,
}

/// Extremes of `K_H` over the manifold: exact on `CP^n`, Monte Carlo otherwise.
pub fn curvature_extremes(
    backend: &GeometryBackend,
    h: &ObservableFunction,
    sample_count: usize,
    seed: u64,
) -> Result<CurvatureExtremes> {
    if sample_count == 0 {
        return Err(Error::InvalidInput(
            "sample_count must be at least 1".into(),
        ));
    }
    if matches!(backend.kind(), super::BackendKind::Projective { .. }) {
        return Ok(CurvatureExtremes {
            kappa: 1.0,
            lambda: 1.0,
            samples_used: 0,
            analytic: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappa = f64::INFINITY;
    let mut lambda = f64::NEG_INFINITY;
    let mut used = 0;
    for _ in 0..sample_count {
        let p = backend.sample_point(&mut rng);
        let grad = h.gradient(&p)?;
        match sectional_curvature_h(backend, &p, &grad) {
            Ok(k) => {
                kappa = kappa.min(k);
                lambda = lambda.max(k);
                used += 1;
            }
            Err(Error::DegeneratePlane { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::EstimationFailure(format!(
            "all {sample_count} sampled points were critical"
        )));
    }
    Ok(CurvatureExtremes {
        kappa,
        lambda,
        samples_used: used,
        analytic: false,
    })
}
