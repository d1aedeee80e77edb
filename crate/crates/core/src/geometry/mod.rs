//! Pointwise Kähler geometry: metric, symplectic form, complex structure,
//! Levi-Civita connection and Riemann tensor for three families of state
//! manifolds.
//!
//! Real coordinates are interleaved `(x_1, y_1, .., x_n, y_n)` with
//! `z_i = x_i + i y_i`. The Riemann tensor follows the convention
//! `∇_a∇_b A_c − ∇_b∇_a A_c = −R_abc^d A_d`, which makes it the negative of the
//! usual `R_abcd = K (g_ac g_bd − g_ad g_bc)` form on a space of constant
//! sectional curvature `K`.

pub mod checks;
pub mod curvature;
pub mod potential;
pub mod projective;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Tensor3, Tensor4};

pub use curvature::{
    bisectional_curvature_fh, curvature_extremes, holomorphic_bisectional, holomorphic_sectional,
    sectional_curvature_h, CurvatureExtremes,
};
pub use potential::{KahlerPotential, PotentialTerm};

/// Stable identifier of a backend; points carry it so that mixing backends is caught.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendId(pub u64);

/// A state in one chart of the manifold atlas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub backend_id: BackendId,
    pub chart: usize,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTensors {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub j: DMatrix<f64>,
}

impl MetricTensors {
    /// Builds `ω_ab = g_ac J^c_b` from the metric and complex structure.
    pub fn from_metric_and_structure(g: DMatrix<f64>, j: DMatrix<f64>) -> Self {
        let g_inv = g
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(g.nrows(), g.ncols(), f64::NAN));
        let omega = &g * &j;
        Self { g, g_inv, omega, j }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// `ω^{ab} = g^{ac} g^{bd} ω_cd`.
    pub fn omega_upper(&self) -> DMatrix<f64> {
        &self.g_inv * &self.omega * self.g_inv.transpose()
    }

    /// Index-raised vector `g^{ab} v_b`.
    pub fn raise(&self, covector: &[f64]) -> Vec<f64> {
        crate::linalg::mat_vec_real(&self.g_inv, covector)
    }

    pub fn lower(&self, vector: &[f64]) -> Vec<f64> {
        crate::linalg::mat_vec_real(&self.g, vector)
    }
}

/// Levi-Civita symbols `Γ^a_{bc}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Connection {
    pub gamma: Tensor3,
}

impl Connection {
    /// `Γ^a_{bc} u^b v^c`.
    pub fn contract(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let d = self.gamma.dim;
        (0..d)
            .map(|a| {
                let mut acc = 0.0;
                for b in 0..d {
                    if u[b] == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        acc += self.gamma.get(a, b, c) * u[b] * v[c];
                    }
                }
                acc
            })
            .collect()
    }
}

/// Fully lowered Riemann tensor `R_abcd`.
#[derive(Clone, Debug, PartialEq)]
pub struct Riemann {
    pub r: Tensor4,
}

impl Riemann {
    /// `R(a, b, c, d)` contracted with four vectors in slot order.
    pub fn contract4(&self, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
        let n = self.r.dim;
        let mut acc = 0.0;
        for i in 0..n {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                if b[j] == 0.0 {
                    continue;
                }
                for k in 0..n {
                    if c[k] == 0.0 {
                        continue;
                    }
                    let base = self.r.idx(i, j, k, 0);
                    let mut inner = 0.0;
                    for l in 0..n {
                        inner += self.r.data[base + l] * d[l];
                    }
                    acc += a[i] * b[j] * c[k] * inner;
                }
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendKind {
    /// `CP^n` with `n + 1` affine charts.
    Projective { n: usize },
    /// `CP^{n_1} × CP^{n_2} × ..`; the chart index is mixed-radix over factors.
    Product { factors: Vec<usize> },
    /// Single-chart manifold from a Kähler potential.
    Potential(KahlerPotential),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryBackend {
    kind: BackendKind,
    id: BackendId,
}

/// One projective block of a projective or product backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Factor {
    pub n: usize,
    /// Offset of the block in real coordinates.
    pub offset: usize,
}

impl GeometryBackend {
    pub fn projective(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("CP^n requires n >= 1".into()));
        }
        Ok(Self::with_kind(BackendKind::Projective { n }))
    }

    pub fn product(factors: Vec<usize>) -> Result<Self> {
        if factors.is_empty() || factors.contains(&0) {
            return Err(Error::InvalidInput(
                "product backend needs at least one factor, each of dimension >= 1".into(),
            ));
        }
        Ok(Self::with_kind(BackendKind::Product { factors }))
    }

    pub fn potential(potential: KahlerPotential) -> Result<Self> {
        let checked = KahlerPotential::new(potential.dimension, potential.terms)?;
        Ok(Self::with_kind(BackendKind::Potential(checked)))
    }

    fn with_kind(kind: BackendKind) -> Self {
        let id = BackendId(fnv1a(format!("{kind:?}").as_bytes()));
        Self { kind, id }
    }

    pub fn kind(&self) -> &BackendKind {
        &self.kind
    }

    pub fn id(&self) -> BackendId {
        self.id
    }

    pub fn label(&self) -> String {
        match &self.kind {
            BackendKind::Projective { n } => format!("CP^{n}"),
            BackendKind::Product { factors } => factors
                .iter()
                .map(|n| format!("CP^{n}"))
                .collect::<Vec<_>>()
                .join(" x "),
            BackendKind::Potential(p) => format!("potential(C^{})", p.dimension),
        }
    }

    pub fn complex_dimension(&self) -> usize {
        match &self.kind {
            BackendKind::Projective { n } => *n,
            BackendKind::Product { factors } => factors.iter().sum(),
            BackendKind::Potential(p) => p.dimension,
        }
    }

    pub fn real_dimension(&self) -> usize {
        2 * self.complex_dimension()
    }

    /// Projective blocks; empty for potential backends.
    pub fn factors(&self) -> Vec<Factor> {
        match &self.kind {
            BackendKind::Projective { n } => vec![Factor { n: *n, offset: 0 }],
            BackendKind::Product { factors } => {
                let mut offset = 0;
                factors
                    .iter()
                    .map(|&n| {
                        let f = Factor { n, offset };
                        offset += 2 * n;
                        f
                    })
                    .collect()
            }
            BackendKind::Potential(_) => Vec::new(),
        }
    }

    pub fn chart_count(&self) -> usize {
        match &self.kind {
            BackendKind::Projective { n } => n + 1,
            BackendKind::Product { factors } => factors.iter().map(|n| n + 1).product(),
            BackendKind::Potential(_) => 1,
        }
    }

    /// Per-factor chart indices of a mixed-radix chart index.
    pub fn factor_charts(&self, chart: usize) -> Vec<usize> {
        let mut rest = chart;
        self.factors()
            .iter()
            .map(|f| {
                let c = rest % (f.n + 1);
                rest /= f.n + 1;
                c
            })
            .collect()
    }

    pub fn combine_charts(&self, charts: &[usize]) -> usize {
        let mut chart = 0;
        let mut radix = 1;
        for (f, &c) in self.factors().iter().zip(charts) {
            chart += c * radix;
            radix *= f.n + 1;
        }
        chart
    }

    pub fn point(&self, chart: usize, coords: Vec<f64>) -> Result<ChartPoint> {
        let p = ChartPoint {
            backend_id: self.id,
            chart,
            coords,
        };
        self.validate(&p)?;
        Ok(p)
    }

    pub fn validate(&self, p: &ChartPoint) -> Result<()> {
        if p.backend_id != self.id {
            return Err(Error::InvalidInput(
                "point belongs to a different backend".into(),
            ));
        }
        if p.coords.len() != self.real_dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.real_dimension(),
                found: p.coords.len(),
            });
        }
        if p.chart >= self.chart_count() {
            return Err(Error::InvalidInput(format!(
                "chart {} out of range for {} charts",
                p.chart,
                self.chart_count()
            )));
        }
        if let Some(v) = p.coords.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate {v}")));
        }
        Ok(())
    }

    /// Homogeneous representatives of each projective factor.
    pub fn homogeneous(&self, p: &ChartPoint) -> Vec<Vec<Complex64>> {
        let charts = self.factor_charts(p.chart);
        self.factors()
            .iter()
            .zip(charts)
            .map(|(f, c)| projective::lift(c, &p.coords[f.offset..f.offset + 2 * f.n]))
            .collect()
    }

    /// Point from homogeneous vectors, placed in each factor's best chart.
    pub fn from_homogeneous(&self, psis: &[Vec<Complex64>]) -> Result<ChartPoint> {
        let factors = self.factors();
        if factors.is_empty() {
            return Err(Error::InvalidInput(
                "homogeneous coordinates need a projective or product backend".into(),
            ));
        }
        if psis.len() != factors.len() {
            return Err(Error::DimensionMismatch {
                expected: factors.len(),
                found: psis.len(),
            });
        }
        let mut coords = Vec::with_capacity(self.real_dimension());
        let mut charts = Vec::with_capacity(factors.len());
        for (f, psi) in factors.iter().zip(psis) {
            if psi.len() != f.n + 1 {
                return Err(Error::DimensionMismatch {
                    expected: f.n + 1,
                    found: psi.len(),
                });
            }
            if psi.iter().all(|c| c.norm_sqr() == 0.0) {
                return Err(Error::InvalidInput("zero homogeneous vector".into()));
            }
            let c = projective::best_chart(psi);
            coords.extend(projective::project(psi, c)?);
            charts.push(c);
        }
        self.point(self.combine_charts(&charts), coords)
    }

    pub fn metric_at(&self, p: &ChartPoint) -> Result<MetricTensors> {
        self.validate(p)?;
        match &self.kind {
            BackendKind::Projective { .. } => Ok(projective::metric(&p.coords)),
            BackendKind::Product { .. } => {
                let d = self.real_dimension();
                let mut g = DMatrix::zeros(d, d);
                for f in self.factors() {
                    let m = projective::metric(&p.coords[f.offset..f.offset + 2 * f.n]);
                    g.view_mut((f.offset, f.offset), (2 * f.n, 2 * f.n))
                        .copy_from(&m.g);
                }
                Ok(MetricTensors::from_metric_and_structure(
                    g,
                    projective::complex_structure(d),
                ))
            }
            BackendKind::Potential(k) => Ok(MetricTensors::from_metric_and_structure(
                k.metric(&p.coords)?,
                projective::complex_structure(self.real_dimension()),
            )),
        }
    }

    pub fn christoffels_at(&self, p: &ChartPoint) -> Result<Connection> {
        self.validate(p)?;
        match &self.kind {
            BackendKind::Projective { .. } => Ok(Connection {
                gamma: projective::christoffels(&p.coords),
            }),
            BackendKind::Product { .. } => {
                let d = self.real_dimension();
                let mut gamma = Tensor3::zeros(d);
                for f in self.factors() {
                    let block = projective::christoffels(&p.coords[f.offset..f.offset + 2 * f.n]);
                    let m = 2 * f.n;
                    for a in 0..m {
                        for b in 0..m {
                            for c in 0..m {
                                gamma.set(
                                    f.offset + a,
                                    f.offset + b,
                                    f.offset + c,
                                    block.get(a, b, c),
                                );
                            }
                        }
                    }
                }
                Ok(Connection { gamma })
            }
            BackendKind::Potential(k) => {
                let g = k.metric(&p.coords)?;
                let g_inv = invert(&g)?;
                let dg = k.metric_first_derivatives(&p.coords)?;
                Ok(Connection {
                    gamma: connection_from_derivatives(&g_inv, &dg),
                })
            }
        }
    }

    pub fn riemann_at(&self, p: &ChartPoint) -> Result<Riemann> {
        self.validate(p)?;
        match &self.kind {
            BackendKind::Projective { .. } => Ok(Riemann {
                r: projective::riemann(&projective::metric(&p.coords)),
            }),
            BackendKind::Product { .. } => {
                let d = self.real_dimension();
                let mut r = Tensor4::zeros(d);
                for f in self.factors() {
                    let block = projective::riemann(&projective::metric(
                        &p.coords[f.offset..f.offset + 2 * f.n],
                    ));
                    let m = 2 * f.n;
                    let o = f.offset;
                    for a in 0..m {
                        for b in 0..m {
                            for c in 0..m {
                                for e in 0..m {
                                    r.set(o + a, o + b, o + c, o + e, block.get(a, b, c, e));
                                }
                            }
                        }
                    }
                }
                Ok(Riemann { r })
            }
            BackendKind::Potential(k) => {
                let g = k.metric(&p.coords)?;
                let g_inv = invert(&g)?;
                let dg = k.metric_first_derivatives(&p.coords)?;
                let ddg = k.metric_second_derivatives(&p.coords)?;
                let gamma = connection_from_derivatives(&g_inv, &dg);
                Ok(Riemann {
                    r: riemann_from_derivatives(&g, &gamma, &ddg),
                })
            }
        }
    }

    /// Re-expresses `p` in `target_chart`.
    pub fn chart_transition(&self, p: &ChartPoint, target_chart: usize) -> Result<ChartPoint> {
        self.validate(p)?;
        if target_chart >= self.chart_count() {
            return Err(Error::InvalidInput(format!(
                "chart {target_chart} out of range"
            )));
        }
        if matches!(self.kind, BackendKind::Potential(_)) {
            return Ok(p.clone());
        }
        let targets = self.factor_charts(target_chart);
        let mut coords = Vec::with_capacity(p.coords.len());
        for (psi, &c) in self.homogeneous(p).iter().zip(&targets) {
            coords.extend(projective::project(psi, c)?);
        }
        Ok(ChartPoint {
            backend_id: self.id,
            chart: target_chart,
            coords,
        })
    }

    /// Moves every factor whose affine coordinates left `|z_i| <= 2` to the
    /// chart of its largest homogeneous component. Returns whether a switch happened.
    pub fn normalize_chart(&self, p: &mut ChartPoint) -> bool {
        let factors = self.factors();
        if factors.is_empty() {
            return false;
        }
        let mut charts = self.factor_charts(p.chart);
        let mut switched = false;
        for (k, f) in factors.iter().enumerate() {
            let block = &p.coords[f.offset..f.offset + 2 * f.n];
            if projective::needs_switch(block) {
                let psi = projective::lift(charts[k], block);
                let best = projective::best_chart(&psi);
                if best != charts[k] {
                    let new =
                        projective::project(&psi, best).expect("best chart is always reachable");
                    p.coords[f.offset..f.offset + 2 * f.n].copy_from_slice(&new);
                    charts[k] = best;
                    switched = true;
                }
            }
        }
        if switched {
            p.chart = self.combine_charts(&charts);
        }
        switched
    }

    /// Uniform sample of affine coordinates with `|z_i| <= radius`, in a uniformly
    /// chosen chart.
    pub fn sample_point_within<R: Rng + ?Sized>(&self, rng: &mut R, radius: f64) -> ChartPoint {
        let chart = rng.gen_range(0..self.chart_count());
        let coords = (0..self.complex_dimension())
            .flat_map(|_| {
                let r = radius * rng.gen::<f64>().sqrt();
                let t = rng.gen::<f64>() * std::f64::consts::TAU;
                [r * t.cos(), r * t.sin()]
            })
            .collect();
        ChartPoint {
            backend_id: self.id,
            chart,
            coords,
        }
    }

    /// Sampling measure used for curvature estimates: `|z_i| <= 3` across all charts.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> ChartPoint {
        self.sample_point_within(rng, 3.0)
    }
}

fn invert(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    g.clone()
        .try_inverse()
        .ok_or_else(|| Error::DifferentiationFailure("metric is singular".into()))
}

/// `Γ^a_bc = ½ g^{ad} (∂_b g_dc + ∂_c g_db − ∂_d g_bc)`.
pub fn connection_from_derivatives(g_inv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Tensor3 {
    let d = g_inv.nrows();
    let mut lowered = Tensor3::zeros(d);
    for e in 0..d {
        for b in 0..d {
            for c in b..d {
                let v = 0.5 * (dg[b][(e, c)] + dg[c][(e, b)] - dg[e][(b, c)]);
                lowered.set(e, b, c, v);
                lowered.set(e, c, b, v);
            }
        }
    }
    let mut gamma = Tensor3::zeros(d);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let v: f64 = (0..d).map(|e| g_inv[(a, e)] * lowered.get(e, b, c)).sum();
                gamma.set(a, b, c, v);
            }
        }
    }
    gamma
}

/// Lowered Riemann tensor from metric derivatives, in this crate's sign convention.
pub fn riemann_from_derivatives(
    g: &DMatrix<f64>,
    gamma: &Tensor3,
    ddg: &[Vec<DMatrix<f64>>],
) -> Tensor4 {
    let d = g.nrows();
    // Γ_{e,bc} = g_ef Γ^f_bc
    let mut low = Tensor3::zeros(d);
    for e in 0..d {
        for b in 0..d {
            for c in 0..d {
                let v: f64 = (0..d).map(|f| g[(e, f)] * gamma.get(f, b, c)).sum();
                low.set(e, b, c, v);
            }
        }
    }
    let mut r = Tensor4::zeros(d);
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let second = 0.5
                        * (ddg[b][c][(a, e)] + ddg[a][e][(b, c)]
                            - ddg[a][c][(b, e)]
                            - ddg[b][e][(a, c)]);
                    let mut quad = 0.0;
                    for f in 0..d {
                        quad += gamma.get(f, b, c) * low.get(f, a, e)
                            - gamma.get(f, b, e) * low.get(f, a, c);
                    }
                    r.set(a, b, c, e, -(second + quad));
                }
            }
        }
    }
    r
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn product_chart_indices_round_trip() {
        let b = GeometryBackend::product(vec![1, 2]).unwrap();
        assert_eq!(b.chart_count(), 6);
        for chart in 0..6 {
            assert_eq!(b.combine_charts(&b.factor_charts(chart)), chart);
        }
    }

    #[test]
    fn rejects_wrong_dimension_and_nonfinite() {
        let b = GeometryBackend::projective(2).unwrap();
        assert!(matches!(
            b.point(0, vec![0.0; 3]),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 3
            })
        ));
        assert!(matches!(
            b.point(0, vec![0.0, f64::NAN, 0.0, 0.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(b
            .metric_at(&ChartPoint {
                backend_id: b.id(),
                chart: 0,
                coords: vec![f64::INFINITY, 0.0, 0.0, 0.0]
            })
            .is_err());
    }

    #[test]
    fn product_metric_is_block_diagonal() {
        let b = GeometryBackend::product(vec![1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = b.sample_point(&mut rng);
        let m = b.metric_at(&p).unwrap();
        let gam = b.christoffels_at(&p).unwrap().gamma;
        for a in 0..4 {
            for c in 0..4 {
                if a / 2 != c / 2 {
                    assert_eq!(m.g[(a, c)], 0.0);
                    for e in 0..4 {
                        assert_eq!(gam.get(a, c, e), 0.0);
                        assert_eq!(gam.get(e, a, c), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn normalize_chart_moves_large_coordinates() {
        let b = GeometryBackend::projective(1).unwrap();
        let mut p = b.point(0, vec![3.0, 0.0]).unwrap();
        assert!(b.normalize_chart(&mut p));
        assert_eq!(p.chart, 1);
        assert!((p.coords[0] - 1.0 / 3.0).abs() < 1e-15);
    }
}
