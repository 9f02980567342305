//! Dense complex Hermitian kernels shared by the rest of the crate.
//!
//! Every operator in this crate is a finite Hermitian matrix standing in for
//! a selfadjoint Fredholm operator. The eigensolver is nalgebra's Householder
//! tridiagonalisation followed by implicit-shift QR; this module adds the
//! ordering, phase convention and residual contract on top of it.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Default Hermiticity tolerance, relative to `1 + max|entries|`.
pub const HERM_TOL: f64 = 1e-12;
/// Default unitarity tolerance on `‖U Uᴴ − I‖_max`.
pub const UNIT_TOL: f64 = 1e-12;

const EIGEN_MAX_SWEEPS_PER_DIM: usize = 200;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut defect = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            defect = defect.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    defect
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `‖m‖₂`, the largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.adjoint() * m;
    let top = gram
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, &x| acc.max(x));
    top.max(0.0).sqrt()
}

fn check_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Finite Hermitian matrix with its Hermiticity tolerance.
///
/// The stored entries are always the exact Hermitian part of what was
/// supplied; `asymmetry` records how far the input was from Hermitian.
#[derive(Clone, Debug)]
pub struct SelfAdjointOp {
    entries: CMatrix,
    herm_tol: f64,
    asymmetry: f64,
}

impl SelfAdjointOp {
    pub fn new(entries: CMatrix) -> Result<Self> {
        Self::with_tolerance(entries, HERM_TOL)
    }

    pub fn with_tolerance(entries: CMatrix, herm_tol: f64) -> Result<Self> {
        check_square(&entries)?;
        let asymmetry = hermitian_defect(&entries);
        let tolerance = herm_tol * (1.0 + max_abs(&entries));
        if !(asymmetry <= tolerance) {
            return Err(Error::NotHermitian {
                asymmetry,
                tolerance,
            });
        }
        Ok(Self {
            entries: hermitian_part(&entries),
            herm_tol,
            asymmetry,
        })
    }

    /// Symmetrises without checking; the defect stays available as a diagnostic.
    pub fn from_hermitian_part(entries: CMatrix) -> Self {
        assert_eq!(entries.nrows(), entries.ncols(), "operator must be square");
        let asymmetry = hermitian_defect(&entries);
        Self {
            entries: hermitian_part(&entries),
            herm_tol: HERM_TOL,
            asymmetry,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: CMatrix::zeros(dim, dim),
            herm_tol: HERM_TOL,
            asymmetry: 0.0,
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::from(v);
        }
        Self {
            entries: m,
            herm_tol: HERM_TOL,
            asymmetry: 0.0,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn herm_tol(&self) -> f64 {
        self.herm_tol
    }

    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }

    /// `self + scale · other`.
    pub fn add_scaled(&self, other: &SelfAdjointOp, scale: f64) -> Result<SelfAdjointOp> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries + other.entries.scale(scale),
            herm_tol: self.herm_tol,
            asymmetry: self.asymmetry.max(other.asymmetry),
        })
    }

    /// `self − shift · I`.
    pub fn shifted(&self, shift: f64) -> SelfAdjointOp {
        let mut entries = self.entries.clone();
        for i in 0..self.dim() {
            entries[(i, i)] -= C64::from(shift);
        }
        Self {
            entries,
            herm_tol: self.herm_tol,
            asymmetry: self.asymmetry,
        }
    }

    pub fn scaled(&self, s: f64) -> SelfAdjointOp {
        Self {
            entries: self.entries.scale(s),
            herm_tol: self.herm_tol,
            asymmetry: self.asymmetry,
        }
    }

    /// `basisᴴ · self · basis` for a basis with orthonormal columns.
    pub fn compress(&self, basis: &CMatrix) -> Result<SelfAdjointOp> {
        check_dims(self.dim(), basis.nrows())?;
        let m = basis.adjoint() * &self.entries * basis;
        Ok(Self::from_hermitian_part(m))
    }

    pub fn direct_sum(parts: &[&SelfAdjointOp]) -> SelfAdjointOp {
        let n: usize = parts.iter().map(|p| p.dim()).sum();
        let mut m = CMatrix::zeros(n, n);
        let mut off = 0;
        for p in parts {
            let d = p.dim();
            m.view_mut((off, off), (d, d)).copy_from(&p.entries);
            off += d;
        }
        Self {
            entries: m,
            herm_tol: HERM_TOL,
            asymmetry: parts.iter().fold(0.0, |a, p| a.max(p.asymmetry)),
        }
    }
}

/// Finite unitary matrix.
#[derive(Clone, Debug)]
pub struct UnitaryOp {
    entries: CMatrix,
    unit_tol: f64,
}

pub fn unitarity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    max_abs(&(m * m.adjoint() - identity(n)))
}

impl UnitaryOp {
    pub fn new(entries: CMatrix) -> Result<Self> {
        Self::with_tolerance(entries, UNIT_TOL)
    }

    pub fn with_tolerance(entries: CMatrix, unit_tol: f64) -> Result<Self> {
        check_square(&entries)?;
        let defect = unitarity_defect(&entries);
        if !(defect <= unit_tol) {
            return Err(Error::NotUnitary {
                defect,
                tolerance: unit_tol,
            });
        }
        Ok(Self { entries, unit_tol })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: identity(dim),
            unit_tol: UNIT_TOL,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn unit_tol(&self) -> f64 {
        self.unit_tol
    }

    pub fn inverse(&self) -> UnitaryOp {
        Self {
            entries: self.entries.adjoint(),
            unit_tol: self.unit_tol,
        }
    }
}

/// Full eigendecomposition, ascending eigenvalues.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
    pub residual: f64,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V Λ Vᴴ`.
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..n {
            let l = self.eigenvalues[j];
            scaled.column_mut(j).scale_mut(l);
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// Applies `f` through the functional calculus.
    pub fn apply_function(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let n = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..n {
            let w = f(self.eigenvalues[j]);
            for i in 0..n {
                scaled[(i, j)] *= w;
            }
        }
        scaled * self.eigenvectors.adjoint()
    }
}

fn residual_bound(h: &SelfAdjointOp) -> f64 {
    1e-10 * (1.0 + h.max_abs() * h.dim() as f64)
}

fn ascending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

fn check_finite(h: &SelfAdjointOp) -> Result<()> {
    if h.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenNonConvergence {
            residual: f64::NAN,
        });
    }
    Ok(())
}

/// Orthonormal eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues ascend; ties keep solver order. Each eigenvector's first
/// component with modulus above 1e-12 is rotated to be real positive.
pub fn eigh(h: &SelfAdjointOp) -> Result<Spectrum> {
    check_finite(h)?;
    let n = h.dim();
    if n == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
            eigenvectors: CMatrix::zeros(0, 0),
            residual: 0.0,
        });
    }
    let decomposition = SymmetricEigen::try_new(
        h.entries.clone(),
        f64::EPSILON,
        EIGEN_MAX_SWEEPS_PER_DIM * n,
    )
    .ok_or(Error::EigenNonConvergence {
        residual: f64::INFINITY,
    })?;

    let raw: Vec<f64> = decomposition.eigenvalues.iter().copied().collect();
    let order = ascending_order(&raw);
    let eigenvalues: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = decomposition.eigenvectors.column(src);
        let phase = col
            .iter()
            .find(|z| z.norm() > 1e-12)
            .map(|z| z.conj() / z.norm())
            .unwrap_or(C64::from(1.0));
        for i in 0..n {
            eigenvectors[(i, dst)] = col[i] * phase;
        }
    }

    let hv = &h.entries * &eigenvectors;
    let mut residual = 0.0f64;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += (hv[(i, j)] - eigenvectors[(i, j)] * eigenvalues[j]).norm_sqr();
        }
        residual = residual.max(s.sqrt());
    }
    if residual > residual_bound(h) {
        return Err(Error::EigenNonConvergence { residual });
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        residual,
    })
}

/// Ascending eigenvalues only.
pub fn eigvalsh(h: &SelfAdjointOp) -> Result<Vec<f64>> {
    check_finite(h)?;
    if h.dim() == 0 {
        return Ok(Vec::new());
    }
    let mut values: Vec<f64> = h.entries.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Diagonal matrix elements `⟨v_i, A v_i⟩` in the eigenbasis.
pub fn expectation_values(a: &CMatrix, spectrum: &Spectrum) -> Result<Vec<C64>> {
    check_dims(spectrum.dim(), a.nrows())?;
    check_dims(spectrum.dim(), a.ncols())?;
    let av = a * &spectrum.eigenvectors;
    let n = spectrum.dim();
    Ok((0..n)
        .map(|j| {
            (0..n).fold(C64::from(0.0), |acc, i| {
                acc + spectrum.eigenvectors[(i, j)].conj() * av[(i, j)]
            })
        })
        .collect())
}

/// `Σ_i ⟨v_i, A v_i⟩ e^{−ε λ_i²}` with precomputed expectation values,
/// summed in ascending-eigenvalue order.
pub fn heat_sum(expectations: &[C64], eigenvalues: &[f64], eps: f64) -> C64 {
    expectations
        .iter()
        .zip(eigenvalues)
        .fold(C64::from(0.0), |acc, (a, &l)| acc + a * (-eps * l * l).exp())
}

/// `Tr(A e^{−ε H²})` through the eigendecomposition of `H`.
pub fn heat_weighted_trace(a: &CMatrix, h: &SelfAdjointOp, eps: f64) -> Result<C64> {
    check_dims(h.dim(), a.nrows())?;
    check_dims(h.dim(), a.ncols())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let spectrum = eigh(h)?;
    let ex = expectation_values(a, &spectrum)?;
    Ok(heat_sum(&ex, &spectrum.eigenvalues, eps))
}

/// `D g − g D`.
pub fn commutator(d: &SelfAdjointOp, g: &UnitaryOp) -> Result<CMatrix> {
    check_dims(d.dim(), g.dim())?;
    Ok(d.entries() * g.entries() - g.entries() * d.entries())
}

/// `g⁻¹ D g`, re-symmetrised; the asymmetry before symmetrising is kept.
pub fn conjugate(d: &SelfAdjointOp, g: &UnitaryOp) -> Result<SelfAdjointOp> {
    check_dims(d.dim(), g.dim())?;
    let m = g.entries().adjoint() * d.entries() * g.entries();
    Ok(SelfAdjointOp::from_hermitian_part(m))
}
