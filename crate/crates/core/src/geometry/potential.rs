//! Kähler manifolds given by a global potential on a single affine chart of `C^n`.
//!
//! The real metric is `g(u, v) = 2 Re Σ h_{ij} u^i conj(v^j)` with
//! `h_{ij} = ∂_i ∂_j̄ K`, so `K = 2 ln(1 + |z|²)` reproduces the projective
//! normalization and `K = |z|²` gives the flat metric `2 δ_ab`.
//! Derivatives come from nested dual numbers: the metric needs two, the
//! connection three and the curvature four.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::{partial, second_partial, Dual, Scalar};
use crate::error::{Error, Result};

/// One summand of the potential. Every form depends on `|z_k|²` only, so the
/// coordinate rotations `z_k → e^{it} z_k` are isometries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialTerm {
    /// `coef · Σ|z|²`
    NormSquared { coef: f64 },
    /// `coef · ln(1 + Σ|z|²)`
    LogOnePlusNormSquared { coef: f64 },
    /// `coef · (Σ|z|²)²`
    QuarticNorm { coef: f64 },
    /// `coef · |z_index|²`
    CoordinateNormSquared { index: usize, coef: f64 },
    /// `coef · ln(1 + |z_index|²)`
    CoordinateLogOnePlus { index: usize, coef: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KahlerPotential {
    pub dimension: usize,
    pub terms: Vec<PotentialTerm>,
}

impl KahlerPotential {
    pub fn new(dimension: usize, terms: Vec<PotentialTerm>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput(
                "potential dimension must be positive".into(),
            ));
        }
        for t in &terms {
            let (coef, index) = match *t {
                PotentialTerm::NormSquared { coef }
                | PotentialTerm::LogOnePlusNormSquared { coef }
                | PotentialTerm::QuarticNorm { coef } => (coef, None),
                PotentialTerm::CoordinateNormSquared { index, coef }
                | PotentialTerm::CoordinateLogOnePlus { index, coef } => (coef, Some(index)),
            };
            if !coef.is_finite() {
                return Err(Error::InvalidInput(
                    "potential coefficient is not finite".into(),
                ));
            }
            if let Some(i) = index {
                if i >= dimension {
                    return Err(Error::InvalidInput(format!(
                        "potential term index {i} out of range for dimension {dimension}"
                    )));
                }
            }
        }
        Ok(Self { dimension, terms })
    }

    /// Flat `C^n`: `K = Σ|z|²`.
    pub fn flat(dimension: usize) -> Self {
        Self {
            dimension,
            terms: vec![PotentialTerm::NormSquared { coef: 1.0 }],
        }
    }

    /// The projective potential `2 ln(1 + |z|²)` on one affine chart.
    pub fn fubini_study(dimension: usize) -> Self {
        Self {
            dimension,
            terms: vec![PotentialTerm::LogOnePlusNormSquared { coef: 2.0 }],
        }
    }

    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        let sq = |k: usize| x[2 * k] * x[2 * k] + x[2 * k + 1] * x[2 * k + 1];
        let total = (0..self.dimension).fold(T::zero(), |acc, k| acc + sq(k));
        self.terms.iter().fold(T::zero(), |acc, term| {
            acc + match *term {
                PotentialTerm::NormSquared { coef } => total.scale(coef),
                PotentialTerm::LogOnePlusNormSquared { coef } => {
                    (T::one() + total).ln().scale(coef)
                }
                PotentialTerm::QuarticNorm { coef } => (total * total).scale(coef),
                PotentialTerm::CoordinateNormSquared { index, coef } => sq(index).scale(coef),
                PotentialTerm::CoordinateLogOnePlus { index, coef } => {
                    (T::one() + sq(index)).ln().scale(coef)
                }
            }
        })
    }

    /// `r_k ∂K/∂r_k` for each complex coordinate, i.e. `x_k ∂_x K + y_k ∂_y K`.
    pub fn radial_derivatives<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        (0..self.dimension)
            .map(|k| {
                let dx = partial(|v| self.eval(v), x, 2 * k);
                let dy = partial(|v| self.eval(v), x, 2 * k + 1);
                x[2 * k] * dx + x[2 * k + 1] * dy
            })
            .collect()
    }

    /// Real metric entries `g_ab`, row-major, generic over the scalar so that
    /// nesting yields metric derivatives.
    pub fn metric_generic<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let d = 2 * self.dimension;
        let mut hess = vec![T::zero(); d * d];
        for a in 0..d {
            for b in a..d {
                let v = second_partial(|v| self.eval(v), x, a, b);
                hess[a * d + b] = v;
                hess[b * d + a] = v;
            }
        }
        let k = |a: usize, b: usize| hess[a * d + b];
        let mut g = vec![T::zero(); d * d];
        for i in 0..self.dimension {
            for j in 0..self.dimension {
                let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
                let sym = (k(xi, xj) + k(yi, yj)).scale(0.5);
                let anti = (k(xi, yj) - k(yi, xj)).scale(0.5);
                g[xi * d + xj] = sym;
                g[yi * d + yj] = sym;
                g[xi * d + yj] = anti;
                g[yi * d + xj] = -anti;
            }
        }
        g
    }

    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = 2 * self.dimension;
        let g = DMatrix::from_row_slice(d, d, &self.metric_generic::<f64>(x));
        check_finite(g.as_slice(), "metric")?;
        Ok(g)
    }

    /// `∂_c g_ab` for every `c`.
    pub fn metric_first_derivatives(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let d = 2 * self.dimension;
        (0..d)
            .map(|c| {
                let xs: Vec<Dual<f64>> = x
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        if k == c {
                            Dual::variable(v)
                        } else {
                            Dual::constant(v)
                        }
                    })
                    .collect();
                let vals: Vec<f64> = self.metric_generic(&xs).iter().map(|v| v.eps).collect();
                check_finite(&vals, "metric derivative")?;
                Ok(DMatrix::from_row_slice(d, d, &vals))
            })
            .collect()
    }

    /// `∂_c ∂_e g_ab`, indexed `[c][e]`.
    pub fn metric_second_derivatives(&self, x: &[f64]) -> Result<Vec<Vec<DMatrix<f64>>>> {
        let d = 2 * self.dimension;
        let mut out = vec![vec![DMatrix::zeros(d, d); d]; d];
        for c in 0..d {
            for e in c..d {
                let xs: Vec<Dual<Dual<f64>>> = x
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let inner = if k == e {
                            Dual::variable(v)
                        } else {
                            Dual::constant(v)
                        };
                        let outer = if k == c { 1.0 } else { 0.0 };
                        Dual::new(inner, Dual::constant(outer))
                    })
                    .collect();
                let vals: Vec<f64> = self.metric_generic(&xs).iter().map(|v| v.eps.eps).collect();
                check_finite(&vals, "metric second derivative")?;
                let m = DMatrix::from_row_slice(d, d, &vals);
                out[e][c] = m.clone();
                out[c][e] = m;
            }
        }
        Ok(out)
    }
}

fn check_finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::DifferentiationFailure(format!(
            "{what} is not finite"
        )))
    }
}
