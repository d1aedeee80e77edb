//! Closed forms for complex projective space in affine charts.
//!
//! Chart `c` covers the homogeneous vectors with `ψ_c ≠ 0` and uses the affine
//! coordinates `z = (ψ_α / ψ_c)_{α ≠ c}` in increasing `α` order. The metric is
//! the Fubini–Study metric scaled to holomorphic sectional curvature one; on
//! `CP^1` it is the round unit sphere `4|dz|² / (1 + |z|²)²`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::MetricTensors;
use crate::error::{Error, Result};
use crate::linalg::{to_complex, Tensor3, Tensor4};

/// Minimum `|ψ_target| / |ψ|` for a point to be representable in a chart.
pub const CHART_DENOMINATOR_MIN: f64 = 1e-9;
/// Active chart is abandoned once any affine coordinate exceeds this modulus.
pub const CHART_SWITCH_MODULUS: f64 = 2.0;

const UNIT: [Complex64; 2] = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];

/// Homogeneous representative with `ψ_chart = 1`.
pub fn lift(chart: usize, coords: &[f64]) -> Vec<Complex64> {
    let z = to_complex(coords);
    let n = z.len();
    let mut psi = Vec::with_capacity(n + 1);
    let mut it = z.into_iter();
    for alpha in 0..=n {
        if alpha == chart {
            psi.push(Complex64::new(1.0, 0.0));
        } else {
            psi.push(it.next().expect("coordinate count matches dimension"));
        }
    }
    psi
}

/// Affine coordinates of `ψ` in `chart`.
pub fn project(psi: &[Complex64], chart: usize) -> Result<Vec<f64>> {
    let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let denom = psi[chart];
    let rel = if norm > 0.0 { denom.norm() / norm } else { 0.0 };
    if rel < CHART_DENOMINATOR_MIN {
        return Err(Error::UnreachableChart {
            chart,
            denominator: rel,
        });
    }
    let inv = 1.0 / denom;
    let mut out = Vec::with_capacity(2 * (psi.len() - 1));
    for (alpha, c) in psi.iter().enumerate() {
        if alpha != chart {
            let z = c * inv;
            out.push(z.re);
            out.push(z.im);
        }
    }
    Ok(out)
}

/// Chart maximizing the homogeneous coordinate modulus.
pub fn best_chart(psi: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_mod = -1.0;
    for (alpha, c) in psi.iter().enumerate() {
        let m = c.norm_sqr();
        if m > best_mod {
            best_mod = m;
            best = alpha;
        }
    }
    best
}

pub fn needs_switch(coords: &[f64]) -> bool {
    let lim = CHART_SWITCH_MODULUS * CHART_SWITCH_MODULUS;
    coords
        .chunks_exact(2)
        .any(|c| c[0] * c[0] + c[1] * c[1] > lim)
}

/// Geodesic distance `2 arccos |⟨ψ, φ⟩| / (|ψ||φ|)`.
pub fn geodesic_distance(psi: &[Complex64], phi: &[Complex64]) -> f64 {
    let ip: Complex64 = psi.iter().zip(phi).map(|(a, b)| a.conj() * b).sum();
    let na = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let nb = phi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    2.0 * (ip.norm() / (na * nb)).min(1.0).acos()
}

/// Constant complex structure: `J e_x = -e_y`, `J e_y = e_x` in every pair.
pub fn complex_structure(real_dim: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(real_dim, real_dim);
    for k in 0..real_dim / 2 {
        j[(2 * k, 2 * k + 1)] = 1.0;
        j[(2 * k + 1, 2 * k)] = -1.0;
    }
    j
}

/// Hermitian metric coefficients `h_{i j̄}` so that `g(u, v) = 2 Re Σ h_{ij} u^i conj(v^j)`.
fn hermitian_metric(z: &[Complex64]) -> Vec<Complex64> {
    let n = z.len();
    let big_n = 1.0 + z.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let mut h = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { big_n } else { 0.0 };
            h[i * n + j] =
                (Complex64::new(delta, 0.0) - z[i].conj() * z[j]) * (2.0 / (big_n * big_n));
        }
    }
    h
}

/// Real metric matrix from Hermitian coefficients.
pub(crate) fn real_metric_from_hermitian(h: &[Complex64], n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            for s in 0..2 {
                for t in 0..2 {
                    g[(2 * i + s, 2 * j + t)] = 2.0 * (h[i * n + j] * UNIT[s] * UNIT[t].conj()).re;
                }
            }
        }
    }
    g
}

pub fn metric(coords: &[f64]) -> MetricTensors {
    let z = to_complex(coords);
    let n = z.len();
    let g = real_metric_from_hermitian(&hermitian_metric(&z), n);
    MetricTensors::from_metric_and_structure(g, complex_structure(2 * n))
}

/// Levi-Civita symbols from the holomorphic ones
/// `Γ^k_{ij} = -(δ_ik z̄_j + δ_jk z̄_i) / (1 + |z|²)`.
pub fn christoffels(coords: &[f64]) -> Tensor3 {
    let z = to_complex(coords);
    let n = z.len();
    let big_n = 1.0 + z.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let mut gamma = Tensor3::zeros(2 * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut hol = Complex64::new(0.0, 0.0);
                if i == k {
                    hol -= z[j].conj();
                }
                if j == k {
                    hol -= z[i].conj();
                }
                if hol == Complex64::new(0.0, 0.0) {
                    continue;
                }
                hol /= big_n;
                for s in 0..2 {
                    for t in 0..2 {
                        let v = hol * UNIT[s] * UNIT[t];
                        gamma.set(2 * k, 2 * i + s, 2 * j + t, v.re);
                        gamma.set(2 * k + 1, 2 * i + s, 2 * j + t, v.im);
                    }
                }
            }
        }
    }
    gamma
}

/// `R_abcd = -¼(g_ac g_bd − g_bc g_ad + ω_ac ω_bd − ω_bc ω_ad + 2 ω_ab ω_cd)`.
pub fn riemann(m: &MetricTensors) -> Tensor4 {
    let d = m.g.nrows();
    let g = &m.g;
    let w = &m.omega;
    let mut r = Tensor4::zeros(d);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let v = g[(a, c)] * g[(b, e)] - g[(b, c)] * g[(a, e)] + w[(a, c)] * w[(b, e)]
                        - w[(b, c)] * w[(a, e)]
                        + 2.0 * w[(a, b)] * w[(c, e)];
                    r.set(a, b, c, e, -0.25 * v);
                }
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_of_cp1_is_four_times_identity() {
        let m = metric(&[0.0, 0.0]);
        assert!((m.g[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((m.g[(1, 1)] - 4.0).abs() < 1e-15);
        assert!(m.g[(0, 1)].abs() < 1e-15);
        assert!((m.omega[(0, 1)] - 4.0).abs() < 1e-15);
        assert!((m.omega[(1, 0)] + 4.0).abs() < 1e-15);
    }

    #[test]
    fn unit_modulus_on_cp1_gives_identity_metric() {
        let m = metric(&[1.0, 0.0]);
        assert!((m.g[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((m.g[(1, 1)] - 1.0).abs() < 1e-15);
        assert!(m.g[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn christoffels_vanish_at_origin() {
        let g = christoffels(&[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn chart_transition_inverts_coordinate() {
        let psi = lift(0, &[2.0, 0.0]);
        let w = project(&psi, 1).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && w[1].abs() < 1e-15);
        let back = project(&lift(1, &w), 0).unwrap();
        assert!((back[0] - 2.0).abs() < 1e-12 && back[1].abs() < 1e-12);
    }

    #[test]
    fn unreachable_chart_is_reported() {
        let psi = lift(0, &[0.0, 0.0]);
        assert!(matches!(
            project(&psi, 1),
            Err(Error::UnreachableChart { chart: 1, .. })
        ));
    }

    #[test]
    fn geodesic_distance_between_poles_is_pi() {
        let a = lift(0, &[0.0, 0.0]);
        let b = lift(1, &[0.0, 0.0]);
        assert!((geodesic_distance(&a, &b) - std::f64::consts::PI).abs() < 1e-12);
    }
}
