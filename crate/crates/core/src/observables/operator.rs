use nalgebra::SymmetricEigen;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_norm, CMatrix, CVector};

/// Entries must match their conjugate transposes to this absolute tolerance.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A finite Hermitian matrix `F^α_β`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

/// Wire form: rows of `[re, im]` pairs.
pub type ComplexRows = Vec<Vec<[f64; 2]>>;

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidInput("operator must be at least 1x1".into()));
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in 0..n {
                let a = matrix[(i, j)];
                if !a.re.is_finite() || !a.im.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i}, {j}) is not finite"
                    )));
                }
            }
        }
        let mut worst = (0, 0, 0.0f64);
        for i in 0..n {
            for j in i..n {
                let dev = (matrix[(i, j)] - matrix[(j, i)].conj()).norm();
                if dev > worst.2 {
                    worst = (i, j, dev);
                }
            }
        }
        if worst.2 > HERMITIAN_TOL {
            return Err(Error::NonHermitian {
                row: worst.0,
                col: worst.1,
                deviation: worst.2,
            });
        }
        // Symmetrize away sub-tolerance noise.
        let matrix = (&matrix + matrix.adjoint()).scale(0.5);
        Ok(Self { matrix })
    }

    pub fn from_rows(rows: &ComplexRows) -> Result<Self> {
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
        let entries: Vec<Complex64> = rows
            .iter()
            .flat_map(|r| r.iter().map(|e| Complex64::new(e[0], e[1])))
            .collect();
        Self::new(CMatrix::from_row_slice(n, n, &entries))
    }

    pub fn to_rows(&self) -> ComplexRows {
        let n = self.dim();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| [self.matrix[(i, j)].re, self.matrix[(i, j)].im])
                    .collect()
            })
            .collect()
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d =
            CVector::from_iterator(values.len(), values.iter().map(|&v| Complex64::new(v, 0.0)));
        Self {
            matrix: CMatrix::from_diagonal(&d),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Operator norm `max |λ|`.
    pub fn norm(&self) -> f64 {
        hermitian_norm(&self.matrix)
    }

    pub fn square(&self) -> Self {
        Self {
            matrix: &self.matrix * &self.matrix,
        }
    }

    /// `a·F + b·1`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        let n = self.dim();
        Self {
            matrix: self.matrix.scale(a) + CMatrix::identity(n, n).scale(b),
        }
    }

    pub fn commutator_norm(&self, other: &Self) -> f64 {
        let c = crate::linalg::commutator(&self.matrix, &other.matrix);
        c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn commutes_with(&self, other: &Self, tol: f64) -> bool {
        self.commutator_norm(other) <= tol
    }
}

/// Ascending eigenvalues with one projector per (possibly degenerate) eigenspace.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub projectors: Vec<CMatrix>,
    pub multiplicities: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenspaceSummary {
    pub eigenvalue: f64,
    pub multiplicity: usize,
}

impl Spectrum {
    pub fn degenerate(&self) -> Vec<bool> {
        self.multiplicities.iter().map(|&m| m > 1).collect()
    }

    pub fn summary(&self) -> Vec<EigenspaceSummary> {
        self.eigenvalues
            .iter()
            .zip(&self.multiplicities)
            .map(|(&eigenvalue, &multiplicity)| EigenspaceSummary {
                eigenvalue,
                multiplicity,
            })
            .collect()
    }

    /// `⟨ψ|P_i|ψ⟩ / ⟨ψ|ψ⟩` for every eigenspace.
    pub fn overlaps(&self, psi: &[Complex64]) -> Vec<f64> {
        self.projectors
            .iter()
            .map(|p| crate::linalg::rayleigh(p, psi))
            .collect()
    }

    /// Eigenspace with the largest projector expectation.
    pub fn nearest(&self, psi: &[Complex64]) -> usize {
        let ov = self.overlaps(psi);
        let mut best = 0;
        for (i, &v) in ov.iter().enumerate() {
            if v > ov[best] {
                best = i;
            }
        }
        best
    }
}

/// Eigen-decomposition; eigenvalues closer than `1e-9·‖op‖` share one eigenspace.
pub fn spectral_decomposition(op: &HermitianOperator) -> Result<Spectrum> {
    // Re-validate: callers may hold operators built from unchecked matrices.
    let op = HermitianOperator::new(op.matrix.clone())?;
    let n = op.dim();
    let eig = SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let scale = op.norm();
    let gap = 1e-9 * if scale > 0.0 { scale } else { 1.0 };

    let mut eigenvalues: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &k in &order {
        let lam = eig.eigenvalues[k];
        match eigenvalues.last() {
            Some(&last) if (lam - last).abs() < gap => groups.last_mut().unwrap().push(k),
            _ => {
                eigenvalues.push(lam);
                groups.push(vec![k]);
            }
        }
    }
    let mut projectors = Vec::with_capacity(groups.len());
    for (g, value) in groups.iter().zip(eigenvalues.iter_mut()) {
        let mut p = CMatrix::zeros(n, n);
        for &k in g {
            let v = eig.eigenvectors.column(k);
            p += v * v.adjoint();
        }
        *value = g.iter().map(|&k| eig.eigenvalues[k]).sum::<f64>() / g.len() as f64;
        projectors.push(p);
    }
    Ok(Spectrum {
        multiplicities: groups.iter().map(|g| g.len()).collect(),
        eigenvalues,
        projectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_hermitian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_spectrum_has_rank_one_projectors() {
        let s = spectral_decomposition(&HermitianOperator::diagonal(&[0.0, 1.0])).unwrap();
        assert_eq!(s.eigenvalues, vec![0.0, 1.0]);
        assert_eq!(s.multiplicities, vec![1, 1]);
        assert!((s.projectors[0][(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((s.projectors[1][(1, 1)].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_is_fully_degenerate() {
        let s = spectral_decomposition(&HermitianOperator::diagonal(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(s.eigenvalues.len(), 1);
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-15);
        assert_eq!(s.multiplicities, vec![3]);
        let diff = &s.projectors[0] - CMatrix::identity(3, 3);
        assert!(diff.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn reconstruction_and_projector_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let op = HermitianOperator::new(random_hermitian(&mut rng, 4)).unwrap();
        let s = spectral_decomposition(&op).unwrap();
        let mut recon = CMatrix::zeros(4, 4);
        let mut sum = CMatrix::zeros(4, 4);
        for (lam, p) in s.eigenvalues.iter().zip(&s.projectors) {
            recon += p.scale(*lam);
            sum += p;
            let idem = p * p - p;
            assert!(idem.iter().all(|v| v.norm() < 1e-10));
        }
        for i in 0..s.projectors.len() {
            for j in 0..i {
                let cross = &s.projectors[i] * &s.projectors[j];
                assert!(cross.iter().all(|v| v.norm() < 1e-10));
            }
        }
        assert!((recon - op.matrix()).iter().all(|v| v.norm() < 1e-10));
        assert!((sum - CMatrix::identity(4, 4))
            .iter()
            .all(|v| v.norm() < 1e-10));
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn non_hermitian_names_the_entry() {
        let rows = vec![
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
            vec![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            vec![[0.0, 0.0], [0.5, 0.0], [0.0, 0.0]],
        ];
        match HermitianOperator::from_rows(&rows) {
            Err(Error::NonHermitian { row: 1, col: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn imaginary_diagonal_is_rejected() {
        let rows = vec![vec![[0.0, 1.0], [0.0, 0.0]], vec![[0.0, 0.0], [1.0, 0.0]]];
        assert!(matches!(
            HermitianOperator::from_rows(&rows),
            Err(Error::NonHermitian { row: 0, col: 0, .. })
        ));
    }
}
