//! Operators over the circle: the Fourier-collocation Dirac operator
//! `−i d/dθ ⊗ id`, gauge maps, the splitting by an endomorphism `F` and the
//! spectral flow of the boundary pieces.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{conjugation_path, spectral_flow, FlowOptions, SpectralFlowResult};
use crate::linalg::{
    commutator, eigh, eigvalsh, hermitian_defect, hermitian_part, identity, max_abs,
    unitarity_defect, CMatrix, SelfAdjointOp, UnitaryOp, C64, UNIT_TOL,
};

/// Tolerance on the Hermitian defect of a commutator block `−i g⁻¹g′`.
pub const GAUGE_HERM_TOL: f64 = 1e-8;
/// Unitarity tolerance for gauges read from coefficient files.
pub const LOADED_GAUGE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleGrid {
    n_theta: usize,
}

impl CircleGrid {
    pub fn new(n_theta: usize) -> Result<Self> {
        if n_theta == 0 || n_theta % 2 == 0 {
            return Err(Error::InvalidGrid(format!(
                "n_theta must be odd and positive, got {n_theta}"
            )));
        }
        Ok(Self { n_theta })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_theta as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_theta).map(|j| self.node(j)).collect()
    }

    /// Largest resolved Fourier mode, `(n_theta − 1)/2`.
    pub fn max_mode(&self) -> i64 {
        (self.n_theta as i64 - 1) / 2
    }
}

/// Real antisymmetric Fourier differentiation matrix for an odd number of nodes.
pub fn fourier_diff_matrix(n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |j, l| {
        if j == l {
            return C64::from(0.0);
        }
        let d = j as i64 - l as i64;
        let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        C64::from(0.5 * sign / (d as f64 * PI / n as f64).sin())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleKind {
    FullBoundary,
    SplitPlus,
    SplitMinus,
    Deformed,
}

/// A Hermitian operator on sections over the circle grid.
///
/// Split operators carry per-node frames `W_j` (n × r, orthonormal columns)
/// so that the operator acts on `⊕_j range(W_j)`.
#[derive(Clone, Debug)]
pub struct CircleOperator {
    pub grid: CircleGrid,
    pub fiber_dim: usize,
    pub orientation: f64,
    pub kind: CircleKind,
    pub op: SelfAdjointOp,
    pub frames: Option<Vec<CMatrix>>,
}

impl CircleOperator {
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Rank of the bundle the operator acts on.
    pub fn rank(&self) -> usize {
        match &self.frames {
            Some(f) => f.first().map_or(0, |w| w.ncols()),
            None => self.fiber_dim,
        }
    }

    pub fn with_op(&self, op: SelfAdjointOp, kind: CircleKind) -> Result<Self> {
        if op.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: op.dim(),
            });
        }
        Ok(Self {
            op,
            kind,
            ..self.clone()
        })
    }
}

/// `η · (−i d/dθ) ⊗ id_n`, index `j·n + a`.
pub fn build_oriented_dirac(grid: CircleGrid, fiber_dim: usize, orientation: f64) -> CircleOperator {
    let d = fourier_diff_matrix(grid.n_theta()) * C64::new(0.0, -orientation);
    let op = SelfAdjointOp::from_hermitian_part(d.kronecker(&identity(fiber_dim)));
    CircleOperator {
        grid,
        fiber_dim,
        orientation,
        kind: CircleKind::FullBoundary,
        op,
        frames: None,
    }
}

pub fn build_boundary_dirac(grid: CircleGrid, fiber_dim: usize) -> CircleOperator {
    build_oriented_dirac(grid, fiber_dim, 1.0)
}

/// A smooth loop into `U(n)` sampled on the circle grid.
#[derive(Clone, Debug)]
pub struct GaugeMap {
    pub grid: CircleGrid,
    pub fiber_dim: usize,
    pub values: Vec<CMatrix>,
    pub derivatives: Vec<CMatrix>,
}

fn diagonal_phase(ks: &[i64], theta: f64) -> (CMatrix, CMatrix) {
    let n = ks.len();
    let mut g = CMatrix::zeros(n, n);
    let mut dg = CMatrix::zeros(n, n);
    for (a, &k) in ks.iter().enumerate() {
        let z = C64::from_polar(1.0, k as f64 * theta);
        g[(a, a)] = z;
        dg[(a, a)] = z * C64::new(0.0, k as f64);
    }
    (g, dg)
}

impl GaugeMap {
    pub fn from_fn(
        grid: CircleGrid,
        fiber_dim: usize,
        g: impl Fn(f64) -> CMatrix,
        dg: impl Fn(f64) -> CMatrix,
    ) -> Result<Self> {
        let nodes = grid.nodes();
        let values: Vec<CMatrix> = nodes.iter().map(|&t| g(t)).collect();
        let derivatives: Vec<CMatrix> = nodes.iter().map(|&t| dg(t)).collect();
        let map = Self {
            grid,
            fiber_dim,
            values,
            derivatives,
        };
        map.validate(UNIT_TOL * 10.0)?;
        Ok(map)
    }

    /// Derivatives from spectral differentiation of the sampled values.
    pub fn from_values(grid: CircleGrid, fiber_dim: usize, values: Vec<CMatrix>) -> Result<Self> {
        if values.len() != grid.n_theta() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_theta(),
                found: values.len(),
            });
        }
        let dm = fourier_diff_matrix(grid.n_theta());
        let n = grid.n_theta();
        let derivatives = (0..n)
            .map(|j| {
                (0..n).fold(CMatrix::zeros(fiber_dim, fiber_dim), |acc, l| {
                    acc + &values[l] * dm[(j, l)]
                })
            })
            .collect();
        let map = Self {
            grid,
            fiber_dim,
            values,
            derivatives,
        };
        map.validate(UNIT_TOL * 10.0)?;
        Ok(map)
    }

    fn validate(&self, unit_tol: f64) -> Result<()> {
        for (j, g) in self.values.iter().enumerate() {
            if g.nrows() != self.fiber_dim || g.ncols() != self.fiber_dim {
                return Err(Error::InvalidGauge(format!("node {j}: wrong block size")));
            }
            let defect = unitarity_defect(g);
            if !(defect <= unit_tol) {
                return Err(Error::NotUnitary {
                    defect,
                    tolerance: unit_tol,
                });
            }
        }
        Ok(())
    }

    pub fn identity(grid: CircleGrid, fiber_dim: usize) -> Self {
        Self::diagonal_windings(grid, &vec![0; fiber_dim])
    }

    /// `θ ↦ e^{ikθ}`.
    pub fn scalar_winding(grid: CircleGrid, k: i64) -> Self {
        Self::diagonal_windings(grid, &[k])
    }

    /// `θ ↦ diag(e^{ik_1θ}, …, e^{ik_nθ})`.
    pub fn diagonal_windings(grid: CircleGrid, ks: &[i64]) -> Self {
        let nodes = grid.nodes();
        let (values, derivatives) = nodes.iter().map(|&t| diagonal_phase(ks, t)).unzip();
        Self {
            grid,
            fiber_dim: ks.len(),
            values,
            derivatives,
        }
    }

    /// `θ ↦ e^{i(kθ + s·sin θ)}`: winding `k` for every `s`.
    pub fn phase_deformed(grid: CircleGrid, k: i64, s: f64) -> Self {
        let nodes = grid.nodes();
        let (values, derivatives) = nodes
            .iter()
            .map(|&t| {
                let z = C64::from_polar(1.0, k as f64 * t + s * t.sin());
                let dz = z * C64::new(0.0, k as f64 + s * t.cos());
                (
                    CMatrix::from_element(1, 1, z),
                    CMatrix::from_element(1, 1, dz),
                )
            })
            .unzip();
        Self {
            grid,
            fiber_dim: 1,
            values,
            derivatives,
        }
    }

    /// Pointwise product `g·h` with the Leibniz derivative.
    pub fn product(&self, other: &GaugeMap) -> Result<Self> {
        if self.fiber_dim != other.fiber_dim || self.grid != other.grid {
            return Err(Error::InvalidGauge("product of gauges on different bundles".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .collect();
        let derivatives = (0..self.values.len())
            .map(|j| {
                &self.derivatives[j] * &other.values[j] + &self.values[j] * &other.derivatives[j]
            })
            .collect();
        Ok(Self {
            grid: self.grid,
            fiber_dim: self.fiber_dim,
            values,
            derivatives,
        })
    }

    pub fn direct_sum(&self, other: &GaugeMap) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidGauge("direct sum over different grids".into()));
        }
        let (n1, n2) = (self.fiber_dim, other.fiber_dim);
        let block = |a: &CMatrix, b: &CMatrix| {
            let mut m = CMatrix::zeros(n1 + n2, n1 + n2);
            m.view_mut((0, 0), (n1, n1)).copy_from(a);
            m.view_mut((n1, n1), (n2, n2)).copy_from(b);
            m
        };
        Ok(Self {
            grid: self.grid,
            fiber_dim: n1 + n2,
            values: (0..self.values.len())
                .map(|j| block(&self.values[j], &other.values[j]))
                .collect(),
            derivatives: (0..self.values.len())
                .map(|j| block(&self.derivatives[j], &other.derivatives[j]))
                .collect(),
        })
    }

    /// `blockdiag(g(θ_j))` acting on the full grid space.
    pub fn multiplication_operator(&self) -> Result<UnitaryOp> {
        let n = self.fiber_dim;
        let dim = n * self.values.len();
        let mut m = CMatrix::zeros(dim, dim);
        for (j, g) in self.values.iter().enumerate() {
            m.view_mut((j * n, j * n), (n, n)).copy_from(g);
        }
        UnitaryOp::with_tolerance(m, 1e-10)
    }

    /// `−i g⁻¹ g′` at node `j` before symmetrisation.
    pub fn log_derivative(&self, j: usize) -> CMatrix {
        self.values[j].adjoint() * &self.derivatives[j] * C64::new(0.0, -1.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexEntry {
    Real(f64),
    Pair([f64; 2]),
}

impl From<&ComplexEntry> for C64 {
    fn from(e: &ComplexEntry) -> Self {
        match *e {
            ComplexEntry::Real(r) => C64::from(r),
            ComplexEntry::Pair([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeTerm {
    pub k: i64,
    pub coeff: Vec<Vec<ComplexEntry>>,
}

/// `g(θ) = Σ coeff·e^{ikθ}`, the file format for gauge maps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeSpec {
    pub fiber_dim: usize,
    pub terms: Vec<GaugeTerm>,
}

impl GaugeSpec {
    pub fn diagonal(ks: &[i64]) -> Self {
        let n = ks.len();
        let terms = ks
            .iter()
            .enumerate()
            .map(|(a, &k)| GaugeTerm {
                k,
                coeff: (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| ComplexEntry::Real(if i == a && j == a { 1.0 } else { 0.0 }))
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        Self { fiber_dim: n, terms }
    }

    pub fn scalar(k: i64) -> Self {
        Self::diagonal(&[k])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn coefficient(&self, term: &GaugeTerm) -> Result<CMatrix> {
        let n = self.fiber_dim;
        if term.coeff.len() != n || term.coeff.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidGauge(format!(
                "coefficient for k={} is not {n}x{n}",
                term.k
            )));
        }
        Ok(CMatrix::from_fn(n, n, |i, j| C64::from(&term.coeff[i][j])))
    }

    /// Largest |k| among the terms.
    pub fn max_frequency(&self) -> i64 {
        self.terms.iter().map(|t| t.k.abs()).max().unwrap_or(0)
    }

    /// Samples the series, checks unitarity at every node to
    /// [`LOADED_GAUGE_TOL`] and replaces each value by its unitary polar factor.
    pub fn sample(&self, grid: CircleGrid) -> Result<GaugeMap> {
        if self.fiber_dim == 0 {
            return Err(Error::InvalidGauge("fiber_dim must be positive".into()));
        }
        if 2 * self.max_frequency() >= grid.n_theta() as i64 {
            return Err(Error::InvalidGauge(format!(
                "frequency {} is not resolved by n_theta = {}",
                self.max_frequency(),
                grid.n_theta()
            )));
        }
        let coeffs: Vec<(i64, CMatrix)> = self
            .terms
            .iter()
            .map(|t| Ok((t.k, self.coefficient(t)?)))
            .collect::<Result<_>>()?;
        let n = self.fiber_dim;
        let mut values = Vec::with_capacity(grid.n_theta());
        let mut derivatives = Vec::with_capacity(grid.n_theta());
        for theta in grid.nodes() {
            let mut g = CMatrix::zeros(n, n);
            let mut dg = CMatrix::zeros(n, n);
            for (k, c) in &coeffs {
                let z = C64::from_polar(1.0, *k as f64 * theta);
                g += c * z;
                dg += c * (z * C64::new(0.0, *k as f64));
            }
            let defect = unitarity_defect(&g);
            if !(defect <= LOADED_GAUGE_TOL) {
                return Err(Error::NotUnitary {
                    defect,
                    tolerance: LOADED_GAUGE_TOL,
                });
            }
            values.push(polar_unitary(&g)?);
            derivatives.push(dg);
        }
        Ok(GaugeMap {
            grid,
            fiber_dim: n,
            values,
            derivatives,
        })
    }
}

/// Unitary factor `g (gᴴg)^{-1/2}` of a nearly unitary matrix.
fn polar_unitary(g: &CMatrix) -> Result<CMatrix> {
    let gram = SelfAdjointOp::from_hermitian_part(g.adjoint() * g);
    let s = eigh(&gram)?;
    if s.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidGauge("singular gauge value".into()));
    }
    Ok(g * s.apply_function(|l| C64::from(1.0 / l.sqrt())))
}

/// Block-diagonal `−iη g⁻¹g′`, the commutator `g⁻¹[D^∂, g]` discretised
/// as a multiplication operator.
pub fn analytic_gauge_commutator(d: &CircleOperator, g: &GaugeMap) -> Result<SelfAdjointOp> {
    if g.grid != d.grid || g.fiber_dim != d.fiber_dim {
        return Err(Error::InvalidGauge("gauge lives on a different bundle".into()));
    }
    let n = g.fiber_dim;
    let nt = d.grid.n_theta();
    let mut full = CMatrix::zeros(nt * n, nt * n);
    for j in 0..nt {
        let block = g.log_derivative(j) * C64::from(d.orientation);
        let defect = hermitian_defect(&block);
        if defect > GAUGE_HERM_TOL {
            return Err(Error::InvalidGauge(format!(
                "commutator block at node {j} is not Hermitian (defect {defect:.3e})"
            )));
        }
        full.view_mut((j * n, j * n), (n, n)).copy_from(&hermitian_part(&block));
    }
    match &d.frames {
        None => Ok(SelfAdjointOp::from_hermitian_part(full)),
        Some(frames) => {
            let w = frame_matrix(frames, n);
            SelfAdjointOp::from_hermitian_part(full).compress(&w)
        }
    }
}

/// `g⁻¹[D, g]` from the truncated matrices.
pub fn naive_gauge_commutator(d: &CircleOperator, g: &GaugeMap) -> Result<SelfAdjointOp> {
    if d.frames.is_some() {
        return Err(Error::InvalidParameter(
            "naive commutator is defined on the full boundary operator only".into(),
        ));
    }
    let u = g.multiplication_operator()?;
    let c = commutator(&d.op, &u)?;
    Ok(SelfAdjointOp::from_hermitian_part(u.entries().adjoint() * c))
}

fn frame_matrix(frames: &[CMatrix], n: usize) -> CMatrix {
    let r = frames.first().map_or(0, |w| w.ncols());
    let nt = frames.len();
    let mut w = CMatrix::zeros(nt * n, nt * r);
    for (j, f) in frames.iter().enumerate() {
        w.view_mut((j * n, j * r), (n, r)).copy_from(f);
    }
    w
}

/// Boundary endomorphism `F` with its spectral projections and frames.
#[derive(Clone, Debug)]
pub struct BoundarySplitting {
    pub f_values: Vec<CMatrix>,
    pub p_plus: Vec<CMatrix>,
    pub p_minus: Vec<CMatrix>,
    pub w_plus: Vec<CMatrix>,
    pub w_minus: Vec<CMatrix>,
    pub rank_plus: usize,
    pub rank_minus: usize,
    pub min_abs_eig: f64,
}

impl BoundarySplitting {
    pub fn new(f_values: Vec<CMatrix>) -> Result<Self> {
        let first = f_values
            .first()
            .ok_or_else(|| Error::InvalidSplitting("no nodes".into()))?;
        let n = first.nrows();
        let mut split = Self {
            f_values: Vec::with_capacity(f_values.len()),
            p_plus: Vec::new(),
            p_minus: Vec::new(),
            w_plus: Vec::new(),
            w_minus: Vec::new(),
            rank_plus: 0,
            rank_minus: 0,
            min_abs_eig: f64::INFINITY,
        };
        for (j, f) in f_values.into_iter().enumerate() {
            if f.nrows() != n || f.ncols() != n {
                return Err(Error::InvalidSplitting(format!("node {j}: wrong block size")));
            }
            let op = SelfAdjointOp::with_tolerance(f.clone(), 1e-10)
                .map_err(|e| Error::InvalidSplitting(format!("node {j}: {e}")))?;
            let s = eigh(&op)?;
            let min_abs = s.eigenvalues.iter().fold(f64::INFINITY, |a, l| a.min(l.abs()));
            if min_abs <= 1e-10 {
                return Err(Error::InvalidSplitting(format!("F is not invertible at node {j}")));
            }
            split.min_abs_eig = split.min_abs_eig.min(min_abs);
            let neg: Vec<usize> = (0..n).filter(|&i| s.eigenvalues[i] < 0.0).collect();
            let pos: Vec<usize> = (0..n).filter(|&i| s.eigenvalues[i] > 0.0).collect();
            if j == 0 {
                split.rank_plus = pos.len();
                split.rank_minus = neg.len();
            } else if pos.len() != split.rank_plus {
                return Err(Error::InvalidSplitting(format!(
                    "rank of P+ changes from {} to {} at node {j}",
                    split.rank_plus,
                    pos.len()
                )));
            }
            let frame = |idx: &[usize]| {
                CMatrix::from_fn(n, idx.len(), |i, c| s.eigenvectors[(i, idx[c])])
            };
            let wp = frame(&pos);
            let wm = frame(&neg);
            split.p_plus.push(&wp * wp.adjoint());
            split.p_minus.push(&wm * wm.adjoint());
            split.w_plus.push(wp);
            split.w_minus.push(wm);
            split.f_values.push(op.into_entries());
        }
        Ok(split)
    }

    pub fn constant(grid: CircleGrid, f: &CMatrix) -> Result<Self> {
        Self::new(vec![f.clone(); grid.n_theta()])
    }

    /// `F = diag(signs)` at every node.
    pub fn from_signs(grid: CircleGrid, signs: &[f64]) -> Result<Self> {
        let n = signs.len();
        let mut f = CMatrix::zeros(n, n);
        for (i, &s) in signs.iter().enumerate() {
            f[(i, i)] = C64::from(s);
        }
        Self::constant(grid, &f)
    }

    pub fn fiber_dim(&self) -> usize {
        self.f_values.first().map_or(0, |f| f.nrows())
    }

    pub fn is_constant(&self) -> bool {
        self.f_values
            .windows(2)
            .all(|w| max_abs(&(&w[0] - &w[1])) <= 1e-14)
    }

    /// `max_j ‖F_j² − id‖_max`.
    pub fn involution_defect(&self) -> f64 {
        let n = self.fiber_dim();
        self.f_values
            .iter()
            .map(|f| max_abs(&(f * f - identity(n))))
            .fold(0.0, f64::max)
    }

    pub fn projection_defect(&self) -> f64 {
        let n = self.fiber_dim();
        self.p_plus
            .iter()
            .zip(&self.p_minus)
            .map(|(p, m)| max_abs(&(p + m - identity(n))).max(max_abs(&(p * m))))
            .fold(0.0, f64::max)
    }

    fn projection(&self, plus: bool) -> CMatrix {
        let n = self.fiber_dim();
        let blocks = if plus { &self.p_plus } else { &self.p_minus };
        let nt = blocks.len();
        let mut p = CMatrix::zeros(nt * n, nt * n);
        for (j, b) in blocks.iter().enumerate() {
            p.view_mut((j * n, j * n), (n, n)).copy_from(b);
        }
        p
    }

    /// `max_j ‖[g_j, F_j]‖_max`.
    pub fn gauge_commutation_defect(&self, g: &GaugeMap) -> f64 {
        self.f_values
            .iter()
            .zip(&g.values)
            .map(|(f, v)| max_abs(&(f * v - v * f)))
            .fold(0.0, f64::max)
    }
}

/// `B± = P± D P±` as operators on the ranges of `P±`.
///
/// With `product` set, `‖[D, P±]‖_max ≤ 1e−8` is required.
pub fn split_by_f(
    d: &CircleOperator,
    split: &BoundarySplitting,
    product: bool,
) -> Result<(CircleOperator, CircleOperator)> {
    if d.frames.is_some() {
        return Err(Error::InvalidParameter("operator is already split".into()));
    }
    if split.fiber_dim() != d.fiber_dim || split.f_values.len() != d.grid.n_theta() {
        return Err(Error::InvalidSplitting("splitting does not match the operator".into()));
    }
    if product {
        let p = split.projection(true);
        let defect = max_abs(&(d.op.entries() * &p - &p * d.op.entries()));
        if defect > 1e-8 {
            return Err(Error::InvalidSplitting(format!(
                "[D, P+] = {defect:.3e} violates the product condition"
            )));
        }
    }
    let n = d.fiber_dim;
    let make = |frames: &Vec<CMatrix>, kind| -> Result<CircleOperator> {
        let w = frame_matrix(frames, n);
        Ok(CircleOperator {
            grid: d.grid,
            fiber_dim: n,
            orientation: d.orientation,
            kind,
            op: d.op.compress(&w)?,
            frames: Some(frames.clone()),
        })
    };
    Ok((
        make(&split.w_plus, CircleKind::SplitPlus)?,
        make(&split.w_minus, CircleKind::SplitMinus)?,
    ))
}

/// Restricted gauge commutator after checking that `g` preserves the
/// subbundle (`[g, F] = 0`).
pub fn restricted_commutator(
    b: &CircleOperator,
    split: &BoundarySplitting,
    g: &GaugeMap,
) -> Result<SelfAdjointOp> {
    let defect = split.gauge_commutation_defect(g);
    if defect > 1e-8 {
        return Err(Error::InvalidGauge(format!(
            "gauge does not preserve the splitting ([g, F] = {defect:.3e})"
        )));
    }
    analytic_gauge_commutator(b, g)
}

/// Trapezoidal `(1/2πi)∮ tr(g⁻¹g′) dθ`.
pub fn winding_integral(g: &GaugeMap) -> f64 {
    let dtheta = g.grid.spacing();
    let total: C64 = (0..g.values.len())
        .map(|j| (g.values[j].adjoint() * &g.derivatives[j]).trace())
        .fold(C64::from(0.0), |a, b| a + b);
    (total * dtheta / C64::new(0.0, 2.0 * PI)).re
}

pub fn winding_number(g: &GaugeMap) -> Result<i64> {
    let value = winding_integral(g);
    let rounded = value.round();
    let residual = (value - rounded).abs();
    if residual > 0.1 {
        return Err(Error::WindingUnresolved { value, residual });
    }
    Ok(rounded as i64)
}

/// Spectral flow of `B + u·V` together with how it was obtained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShiftedFlow {
    pub value: i64,
    /// Constant `c` subtracted from the operator when the unshifted path had
    /// a branch pinned at zero.
    pub shift: Option<f64>,
    pub flow: Option<SpectralFlowResult>,
}

/// Flow along `op + u·v`; a pinned zero branch is resolved by moving the
/// level to `c = ¼·(smallest nonzero |λ| of op)`.
pub fn flow_with_shift(
    op: &SelfAdjointOp,
    v: &SelfAdjointOp,
    opts: &FlowOptions,
) -> Result<ShiftedFlow> {
    if op.dim() == 0 {
        return Ok(ShiftedFlow {
            value: 0,
            shift: None,
            flow: None,
        });
    }
    match spectral_flow(&conjugation_path(op, v)?, opts) {
        Ok(r) => Ok(ShiftedFlow {
            value: r.value,
            shift: None,
            flow: Some(r),
        }),
        Err(Error::PinnedZero { .. }) => {
            let c = 0.25 * smallest_nonzero_abs(op)?;
            let r = spectral_flow(&conjugation_path(&op.shifted(c), v)?, opts)?;
            Ok(ShiftedFlow {
                value: r.value,
                shift: Some(c),
                flow: Some(r),
            })
        }
        Err(e) => Err(e),
    }
}

pub fn smallest_nonzero_abs(op: &SelfAdjointOp) -> Result<f64> {
    let tol = 1e-9 * op.max_abs().max(1.0);
    let m = eigvalsh(op)?
        .into_iter()
        .map(f64::abs)
        .filter(|&l| l > tol)
        .fold(f64::INFINITY, f64::min);
    Ok(if m.is_finite() { m } else { 1.0 })
}

/// `SF(B, g)` with the commutator-first perturbation.
pub fn boundary_sf(b: &CircleOperator, g: &GaugeMap, opts: &FlowOptions) -> Result<ShiftedFlow> {
    let v = analytic_gauge_commutator(b, g)?;
    flow_with_shift(&b.op, &v, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> CircleGrid {
        CircleGrid::new(n).unwrap()
    }

    #[test]
    fn even_grid_rejected() {
        assert!(matches!(CircleGrid::new(32), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn three_point_spectrum() {
        let d = build_boundary_dirac(grid(3), 1);
        let l = eigvalsh(&d.op).unwrap();
        for (a, b) in l.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_doubles_multiplicity() {
        let l = eigvalsh(&build_boundary_dirac(grid(5), 2).op).unwrap();
        for (i, v) in l.iter().enumerate() {
            assert!((v - ((i / 2) as f64 - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn commutator_blocks() {
        let g = grid(9);
        let d = build_boundary_dirac(g, 1);
        let v = analytic_gauge_commutator(&d, &GaugeMap::scalar_winding(g, 3)).unwrap();
        assert!(max_abs(&(v.entries() - identity(9) * C64::from(3.0))) < 1e-14);
        let d2 = build_boundary_dirac(g, 2);
        let v2 = analytic_gauge_commutator(&d2, &GaugeMap::diagonal_windings(g, &[1, -1])).unwrap();
        for j in 0..9 {
            assert!((v2.entries()[(2 * j, 2 * j)].re - 1.0).abs() < 1e-14);
            assert!((v2.entries()[(2 * j + 1, 2 * j + 1)].re + 1.0).abs() < 1e-14);
        }
        let z = analytic_gauge_commutator(&d, &GaugeMap::identity(g, 1)).unwrap();
        assert_eq!(max_abs(z.entries()), 0.0);
    }

    #[test]
    fn windings() {
        let g = grid(33);
        assert_eq!(winding_number(&GaugeMap::identity(g, 2)).unwrap(), 0);
        assert_eq!(winding_number(&GaugeMap::scalar_winding(g, -3)).unwrap(), -3);
        assert_eq!(winding_number(&GaugeMap::diagonal_windings(g, &[1, -2])).unwrap(), -1);
        assert_eq!(winding_number(&GaugeMap::phase_deformed(g, 2, 0.7)).unwrap(), 2);
    }

    #[test]
    fn split_identity_and_diagonal() {
        let g = grid(7);
        let d = build_boundary_dirac(g, 1);
        let (bp, bm) = split_by_f(&d, &BoundarySplitting::from_signs(g, &[1.0]).unwrap(), true).unwrap();
        assert_eq!(bm.dim(), 0);
        assert!(max_abs(&(bp.op.entries() - d.op.entries())) < 1e-15);

        let d2 = build_boundary_dirac(g, 2);
        let split = BoundarySplitting::from_signs(g, &[1.0, -1.0]).unwrap();
        let (bp, bm) = split_by_f(&d2, &split, true).unwrap();
        assert!(max_abs(&(bp.op.entries() - d.op.entries())) < 1e-14);
        assert!(max_abs(&(bm.op.entries() - d.op.entries())) < 1e-14);
        assert!(split.projection_defect() < 1e-15);
    }

    #[test]
    fn rank_change_rejected() {
        let g = grid(3);
        let mut f = vec![CMatrix::from_element(1, 1, C64::from(1.0)); 3];
        f[2] = CMatrix::from_element(1, 1, C64::from(-1.0));
        assert!(matches!(BoundarySplitting::new(f), Err(Error::InvalidSplitting(_))));
        let _ = g;
    }

    #[test]
    fn scalar_boundary_flow_is_winding() {
        let g = grid(33);
        let d = build_boundary_dirac(g, 1);
        for k in [-2i64, 1, 3] {
            let r = boundary_sf(&d, &GaugeMap::scalar_winding(g, k), &FlowOptions::default()).unwrap();
            assert_eq!(r.value, k);
            assert!(r.shift.is_none());
        }
    }

    #[test]
    fn pinned_branch_resolved_by_shift() {
        let g = grid(17);
        let d = build_boundary_dirac(g, 2);
        let r = boundary_sf(&d, &GaugeMap::diagonal_windings(g, &[2, 0]), &FlowOptions::default()).unwrap();
        assert_eq!(r.value, 2);
        assert!((r.shift.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gauge_json_round_trip() {
        let text = r#"{"fiber_dim": 2, "terms": [
            {"k": 1, "coeff": [[1, 0], [0, 0]]},
            {"k": 0, "coeff": [[0, 0], [0, [0, 1]]]}
        ]}"#;
        let spec = GaugeSpec::from_json(text).unwrap();
        let g = spec.sample(grid(11)).unwrap();
        assert_eq!(winding_number(&g).unwrap(), 1);
        let bad = r#"{"fiber_dim": 1, "terms": [{"k": 0, "coeff": [[2]]}]}"#;
        assert!(matches!(
            GaugeSpec::from_json(bad).unwrap().sample(grid(11)),
            Err(Error::NotUnitary { .. })
        ));
    }

    #[test]
    fn spectral_derivative_matches_analytic() {
        let g = grid(33);
        let exact = GaugeMap::phase_deformed(g, 1, 0.4);
        let approx = GaugeMap::from_values(g, 1, exact.values.clone()).unwrap();
        for j in 0..33 {
            assert!(max_abs(&(&exact.derivatives[j] - &approx.derivatives[j])) < 1e-9);
        }
    }
}
