//! Half-line heat kernels, the block unitary `U` and the boundary factor
//! of the half-cylinder model.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circle::{
    analytic_gauge_commutator, restricted_commutator, split_by_f, BoundarySplitting,
    CircleOperator, GaugeMap,
};
use crate::error::{Error, Result};
use crate::getzler::{GetzlerOptions, GetzlerSolver};
use crate::linalg::{c64, identity, max_abs, CMatrix, SelfAdjointOp, C64};
use crate::quadrature::integrate;

/// One line of a check report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRecord {
    pub fn new(check: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }
}

pub fn all_pass(records: &[CheckRecord]) -> bool {
    records.iter().all(|r| r.pass)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageSign {
    /// Neumann at 0.
    Plus,
    /// Dirichlet at 0.
    Minus,
}

impl ImageSign {
    fn value(self) -> f64 {
        match self {
            ImageSign::Plus => 1.0,
            ImageSign::Minus => -1.0,
        }
    }
}

/// `k±_ε(x, y) = (4πε)^{−1/2}(e^{−(x−y)²/4ε} ± e^{−(x+y)²/4ε})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageHeatKernel {
    pub eps: f64,
    pub sign: ImageSign,
}

impl ImageHeatKernel {
    pub fn new(eps: f64, sign: ImageSign) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { eps, sign })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let e4 = 4.0 * self.eps;
        let direct = (-(x - y).powi(2) / e4).exp();
        let image = (-(x + y).powi(2) / e4).exp();
        (direct + self.sign.value() * image) / (PI * e4).sqrt()
    }

    /// Dirichlet (`k⁻(0,y) = 0`) or Neumann (`∂ₓk⁺(0,y) = 0`) residual on `ys`.
    ///
    /// The Neumann residual is a one-sided second-order difference.
    pub fn boundary_residual(&self, ys: &[f64]) -> f64 {
        let h = 1e-4 * self.eps.sqrt();
        ys.iter()
            .map(|&y| match self.sign {
                ImageSign::Minus => self.eval(0.0, y).abs(),
                ImageSign::Plus => {
                    let d = -3.0 * self.eval(0.0, y) + 4.0 * self.eval(h, y) - self.eval(2.0 * h, y);
                    (d / (2.0 * h)).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// `S(t) = φ(t)/(φ(t)+φ(1−t))`, `φ(t) = e^{−1/t}`: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let p = (-1.0 / t).exp();
    let q = (-1.0 / (1.0 - t)).exp();
    p / (p + q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CutoffShape {
    Smooth,
    /// Indicator of `[0, b]` for both functions.
    Sharp,
}

/// Cutoffs `λ, μ` on `[0, ∞)` with `μ = 1` on `[0, a]`, `μ = 0` from
/// `a + (b−a)/2`, and `λ = 1` up to `a + 3(b−a)/4`, `λ = 0` from `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffPair {
    pub a: f64,
    pub b: f64,
    pub shape: CutoffShape,
}

impl Default for CutoffPair {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 8.0,
            shape: CutoffShape::Smooth,
        }
    }
}

impl CutoffPair {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > a && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 0 < a < b, got a={a}, b={b}")));
        }
        Ok(Self {
            a,
            b,
            shape: CutoffShape::Smooth,
        })
    }

    pub fn sharp(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("need b > 0, got {b}")));
        }
        Ok(Self {
            a: b,
            b,
            shape: CutoffShape::Sharp,
        })
    }

    pub fn mu(&self, x: f64) -> f64 {
        match self.shape {
            CutoffShape::Sharp => f64::from(u8::from(x <= self.b)),
            CutoffShape::Smooth => 1.0 - smooth_step((x - self.a) / ((self.b - self.a) / 2.0)),
        }
    }

    pub fn lambda(&self, x: f64) -> f64 {
        match self.shape {
            CutoffShape::Sharp => f64::from(u8::from(x <= self.b)),
            CutoffShape::Smooth => {
                let w = (self.b - self.a) / 4.0;
                1.0 - smooth_step((x - (self.a + 3.0 * w)) / w)
            }
        }
    }

    /// Breakpoints where the integrand changes character.
    fn breakpoints(&self) -> Vec<f64> {
        match self.shape {
            CutoffShape::Sharp => vec![0.0, self.b],
            CutoffShape::Smooth => vec![0.0, self.a, self.a + (self.b - self.a) / 2.0],
        }
    }

    /// `max |λμ − μ|` and the range violation of both functions on `n` points.
    pub fn defects(&self, n: usize) -> (f64, f64) {
        let mut product = 0.0f64;
        let mut range = 0.0f64;
        for i in 0..=n {
            let x = 1.2 * self.b * i as f64 / n as f64;
            let (l, m) = (self.lambda(x), self.mu(x));
            product = product.max((l * m - m).abs());
            for v in [l, m] {
                range = range.max((-v).max(v - 1.0).max(0.0));
            }
            if x > self.b {
                range = range.max(l.abs()).max(m.abs());
            }
        }
        (product, range)
    }
}

/// `∫₀^b λ(x)·|k⁻_ε(x,x) − k⁺_ε(x,x)|·μ(x) dx`, which is
/// `∫ λμ (πε)^{−1/2} e^{−x²/ε}`.
pub fn half_trace_integral(eps: f64, cutoffs: &CutoffPair) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let norm = (PI * eps).sqrt();
    let f = |x: f64| cutoffs.lambda(x) * cutoffs.mu(x) * (-x * x / eps).exp() / norm;
    let pts = cutoffs.breakpoints();
    let mut total = 0.0;
    let tol = 1e-13 / pts.len() as f64;
    for w in pts.windows(2) {
        total += integrate(f, w[0], w[1], tol, 2000)?.0;
    }
    Ok(total)
}

/// Diagonal trace with the sign of `k⁻ − k⁺`, i.e. `−half_trace_integral`.
pub fn signed_half_trace_integral(eps: f64, cutoffs: &CutoffPair) -> Result<f64> {
    Ok(-half_trace_integral(eps, cutoffs)?)
}

/// `max |∫₀^Z k_ε(x,z)k_δ(z,y)dz − k_{ε+δ}(x,y)|` over `points`.
pub fn semigroup_residual(eps: f64, delta: f64, sign: ImageSign, points: &[(f64, f64)]) -> Result<f64> {
    let ke = ImageHeatKernel::new(eps, sign)?;
    let kd = ImageHeatKernel::new(delta, sign)?;
    let ks = ImageHeatKernel::new(eps + delta, sign)?;
    let mut worst = 0.0f64;
    for &(x, y) in points {
        let reach = 12.0 * (eps.max(delta)).sqrt();
        let z_max = x.max(y) + reach;
        let (v, _) = integrate(|z| ke.eval(x, z) * kd.eval(z, y), 0.0, z_max, 1e-12, 2000)?;
        worst = worst.max((v - ks.eval(x, y)).abs());
    }
    Ok(worst)
}

/// Polynomial `Σ_p c_p ∂^p` with matrix coefficients. `∂` is central
/// because `B`, `F` and the gauge are `x`-independent.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffPoly {
    pub coeffs: Vec<CMatrix>,
}

impl DiffPoly {
    pub fn zero(n: usize) -> Self {
        Self {
            coeffs: vec![CMatrix::zeros(n, n)],
        }
    }

    pub fn constant(c: CMatrix) -> Self {
        Self { coeffs: vec![c] }
    }

    /// `s·∂`.
    pub fn d(n: usize, s: f64) -> Self {
        Self {
            coeffs: vec![CMatrix::zeros(n, n), identity(n) * C64::from(s)],
        }
    }

    fn n(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn add(&self, o: &Self) -> Self {
        let n = self.n();
        let len = self.coeffs.len().max(o.coeffs.len());
        let zero = CMatrix::zeros(n, n);
        Self {
            coeffs: (0..len)
                .map(|p| self.coeffs.get(p).unwrap_or(&zero) + o.coeffs.get(p).unwrap_or(&zero))
                .collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.n();
        let mut coeffs = vec![CMatrix::zeros(n, n); self.coeffs.len() + o.coeffs.len() - 1];
        for (p, a) in self.coeffs.iter().enumerate() {
            for (q, b) in o.coeffs.iter().enumerate() {
                coeffs[p + q] += a * b;
            }
        }
        Self { coeffs }
    }

    /// Formal adjoint: `(c ∂^p)* = (−1)^p c* ∂^p`.
    pub fn adjoint(&self) -> Self {
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(p, c)| c.adjoint() * C64::from(if p % 2 == 0 { 1.0 } else { -1.0 }))
                .collect(),
        }
    }

    pub fn distance(&self, o: &Self) -> f64 {
        self.add(&o.scale(C64::from(-1.0)))
            .coeffs
            .iter()
            .map(max_abs)
            .fold(0.0, f64::max)
    }
}

/// 2×2 block operator with [`DiffPoly`] entries.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOp(pub [[DiffPoly; 2]; 2]);

impl BlockOp {
    pub fn mul(&self, o: &Self) -> Self {
        let e = |i: usize, j: usize| self.0[i][0].mul(&o.0[0][j]).add(&self.0[i][1].mul(&o.0[1][j]));
        BlockOp([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    pub fn adjoint(&self) -> Self {
        let a = |i: usize, j: usize| self.0[j][i].adjoint();
        BlockOp([[a(0, 0), a(0, 1)], [a(1, 0), a(1, 1)]])
    }

    pub fn distance(&self, o: &Self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max(self.0[i][j].distance(&o.0[i][j]));
            }
        }
        d
    }
}

/// Product-case data on one boundary component: `B`, `F` with `F² = 1`,
/// `[B, F] = 0`, optionally the circle operator the data came from.
#[derive(Clone, Debug)]
pub struct HalfCylModel {
    pub b: SelfAdjointOp,
    pub f: CMatrix,
    pub gauge: Option<CMatrix>,
    pub boundary: Option<(CircleOperator, BoundarySplitting)>,
}

fn block_diag(blocks: &[CMatrix]) -> CMatrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = CMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        m.view_mut((o, o), (b.nrows(), b.ncols())).copy_from(b);
        o += b.nrows();
    }
    m
}

impl HalfCylModel {
    pub fn new(b: SelfAdjointOp, f: CMatrix) -> Result<Self> {
        let n = b.dim();
        if f.nrows() != n || f.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: f.nrows(),
            });
        }
        let inv = max_abs(&(&f * &f - identity(n)));
        if inv > 1e-12 {
            return Err(Error::InvalidSplitting(format!("‖F² − 1‖ = {inv:.3e}")));
        }
        let comm = max_abs(&(b.entries() * &f - &f * b.entries()));
        if comm > 1e-10 {
            return Err(Error::InvalidSplitting(format!("‖[B, F]‖ = {comm:.3e}")));
        }
        Ok(Self {
            b,
            f,
            gauge: None,
            boundary: None,
        })
    }

    /// From a full circle operator and a constant splitting.
    pub fn from_circle(d: &CircleOperator, split: &BoundarySplitting) -> Result<Self> {
        if d.frames.is_some() {
            return Err(Error::InvalidParameter("need the unsplit boundary operator".into()));
        }
        let f = block_diag(&split.f_values);
        let mut m = Self::new(d.op.clone(), f)?;
        m.boundary = Some((d.clone(), split.clone()));
        Ok(m)
    }

    pub fn with_gauge(mut self, g: CMatrix) -> Result<Self> {
        let n = self.b.dim();
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: g.nrows(),
            });
        }
        self.gauge = Some(g);
        Ok(self)
    }

    /// `B` and `F` diagonal in a seeded random unitary basis.
    pub fn random_commuting(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(n, n, |_, _| {
            c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let q = z.qr().q();
        let betas: Vec<f64> = (0..n).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let signs: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let diag = |v: &[f64]| CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            v.iter().map(|&x| C64::from(x)),
        ));
        let b = &q * diag(&betas) * q.adjoint();
        let f = &q * diag(&signs) * q.adjoint();
        let mut f = (&f + f.adjoint()) * C64::from(0.5);
        // one Newton–Schulz step pulls F back onto F² = 1
        f = (&f * C64::from(3.0) - &f * &f * &f) * C64::from(0.5);
        Self::new(SelfAdjointOp::from_hermitian_part(b), f)
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    fn poly(&self, c: &CMatrix) -> DiffPoly {
        DiffPoly::constant(c.clone())
    }

    /// `D = [[0, −∂ + B], [∂ + B, 0]]`.
    pub fn dirac(&self) -> BlockOp {
        let n = self.dim();
        let b = self.poly(self.b.entries());
        BlockOp([
            [DiffPoly::zero(n), DiffPoly::d(n, -1.0).add(&b)],
            [DiffPoly::d(n, 1.0).add(&b), DiffPoly::zero(n)],
        ])
    }

    /// `U = 2^{−1/2}[[F, −1], [1, F]]`.
    pub fn u(&self) -> BlockOp {
        self.u_with(-1.0)
    }

    /// `U⁻¹ = 2^{−1/2}[[F, 1], [−1, F]]`.
    pub fn u_inverse(&self) -> BlockOp {
        self.u_with(1.0)
    }

    fn u_with(&self, s: f64) -> BlockOp {
        let n = self.dim();
        let r = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        let f = self.poly(&self.f).scale(r);
        let one = DiffPoly::constant(identity(n)).scale(r);
        BlockOp([[f.clone(), one.scale(C64::from(s))], [one.scale(C64::from(-s)), f]])
    }

    /// `[[−FB, −∂], [∂, FB]]`.
    pub fn conjugated_dirac(&self) -> BlockOp {
        let n = self.dim();
        let fb = self.poly(&(&self.f * self.b.entries()));
        BlockOp([
            [fb.scale(C64::from(-1.0)), DiffPoly::d(n, -1.0)],
            [DiffPoly::d(n, 1.0), fb],
        ])
    }

    pub fn verify_u_identities(&self) -> Vec<CheckRecord> {
        let n = self.dim();
        let tol = 1e-12;
        let d = self.dirac();
        let u = self.u();
        let ui = self.u_inverse();
        let one = DiffPoly::constant(identity(n));
        let id = BlockOp([[one.clone(), DiffPoly::zero(n)], [DiffPoly::zero(n), one]]);
        let d2 = d.mul(&d);
        let udu = u.mul(&d).mul(&ui);
        let mut out = vec![
            CheckRecord::new("F^2 = 1", max_abs(&(&self.f * &self.f - identity(n))), tol),
            CheckRecord::new(
                "[B,F] = 0",
                max_abs(&(self.b.entries() * &self.f - &self.f * self.b.entries())),
                1e-10,
            ),
            CheckRecord::new("U U^-1 = 1", u.mul(&ui).distance(&id), tol),
            CheckRecord::new("U^* = U^-1", u.adjoint().distance(&ui), tol),
            CheckRecord::new("D formally selfadjoint", d.adjoint().distance(&d), tol),
            CheckRecord::new("U D U^-1 block form", udu.distance(&self.conjugated_dirac()), tol),
            CheckRecord::new("U D^2 U^-1 = D^2", u.mul(&d2).mul(&ui).distance(&d2), tol),
        ];
        if let Some(g) = &self.gauge {
            let gp = self.poly(g);
            let gop = BlockOp([[gp.clone(), DiffPoly::zero(n)], [DiffPoly::zero(n), gp]]);
            let dg = d.mul(&gop);
            let gd = gop.mul(&d);
            let comm = BlockOp([
                [dg.0[0][0].add(&gd.0[0][0].scale(C64::from(-1.0))), dg.0[0][1].add(&gd.0[0][1].scale(C64::from(-1.0)))],
                [dg.0[1][0].add(&gd.0[1][0].scale(C64::from(-1.0))), dg.0[1][1].add(&gd.0[1][1].scale(C64::from(-1.0)))],
            ]);
            let bg = self.b.entries() * g - g * self.b.entries();
            let fbg = self.poly(&(&self.f * bg));
            let expected = BlockOp([
                [fbg.scale(C64::from(-1.0)), DiffPoly::zero(n)],
                [DiffPoly::zero(n), fbg],
            ]);
            out.push(CheckRecord::new(
                "[g,F] = 0",
                max_abs(&(g * &self.f - &self.f * g)),
                1e-10,
            ));
            out.push(CheckRecord::new(
                "U [D,g] U^-1 block form",
                u.mul(&comm).mul(&ui).distance(&expected),
                tol,
            ));
        }
        out
    }
}

/// Truncated `[0, X]` eigen-expansion of the Dirichlet (`sin`) or Neumann
/// (`cos`) heat kernel.
pub fn interval_heat_kernel(eps: f64, sign: ImageSign, x_max: f64, n_modes: usize, x: f64, y: f64) -> f64 {
    let mut s = match sign {
        ImageSign::Minus => 0.0,
        ImageSign::Plus => 1.0 / x_max,
    };
    for n in 1..=n_modes {
        let k = n as f64 * PI / x_max;
        let w = (-eps * k * k).exp();
        s += 2.0 / x_max
            * w
            * match sign {
                ImageSign::Minus => (k * x).sin() * (k * y).sin(),
                ImageSign::Plus => (k * x).cos() * (k * y).cos(),
            };
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedDomainReport {
    pub eps: f64,
    pub x_max: f64,
    pub n_modes: usize,
    pub records: Vec<CheckRecord>,
}

/// Compares `e^{−εβ²}k∓` with the truncated-interval expansion on
/// `[0, X/2]²` for each boundary eigenvalue and each factor.
pub fn verify_mixed_domain(betas: &[f64], eps: f64, n_modes: usize, x_max: Option<f64>) -> Result<MixedDomainReport> {
    let x_max = x_max.unwrap_or(12.0 * eps.sqrt());
    if x_max < 10.0 * eps.sqrt() {
        return Err(Error::InvalidParameter(format!(
            "truncation domain X = {x_max} is shorter than 10 sqrt(eps)"
        )));
    }
    let grid: Vec<f64> = (0..=20).map(|i| 0.5 * x_max * i as f64 / 20.0).collect();
    let mut records = Vec::new();
    for sign in [ImageSign::Minus, ImageSign::Plus] {
        let k = ImageHeatKernel::new(eps, sign)?;
        // the wall at X acts on [0, X/2] through the reflection 2X − y
        let edge = grid
            .iter()
            .map(|&y| k.eval(x_max / 2.0, 2.0 * x_max - y).abs())
            .fold(0.0, f64::max);
        if edge > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "truncation domain too short: reflection at X contributes {edge:.3e}"
            )));
        }
        let name = match sign {
            ImageSign::Minus => "Dirichlet",
            ImageSign::Plus => "Neumann",
        };
        records.push(CheckRecord::new(format!("{name} boundary condition"), k.boundary_residual(&grid), 1e-6));
        for &beta in betas {
            let w = (-eps * beta * beta).exp();
            let mut dev = 0.0f64;
            for &x in &grid {
                for &y in &grid {
                    let reference = w * interval_heat_kernel(eps, sign, x_max, n_modes, x, y);
                    dev = dev.max((w * k.eval(x, y) - reference).abs());
                }
            }
            records.push(CheckRecord::new(format!("{name} factor, beta = {beta}"), dev, 1e-6));
        }
    }
    Ok(MixedDomainReport {
        eps,
        x_max,
        n_modes,
        records,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedTerm {
    pub eps: f64,
    /// `√(ε/π) ∫₀¹ Tr(F V e^{−εB(u)²}) du`.
    pub trace_factor: f64,
    pub half_trace: f64,
    pub value: f64,
    pub plus_estimate: f64,
    pub minus_estimate: f64,
    /// `½(plus − minus)` with the half-line factor.
    pub split_value: f64,
}

fn block_estimate(
    d: &SelfAdjointOp,
    v: &SelfAdjointOp,
    a: Option<&CMatrix>,
    eps: f64,
    opts: &GetzlerOptions,
) -> Result<f64> {
    if d.dim() == 0 {
        return Ok(0.0);
    }
    let mut s = match a {
        Some(a) => GetzlerSolver::with_observable(d, v, a)?,
        None => GetzlerSolver::new(d, v)?,
    };
    Ok(s.estimate(eps, opts)?.value)
}

/// Boundary contribution `√(ε/π)∫Tr_N(F·V·e^{−εB(u)²})du · Tr_{[0,∞)}(…)`,
/// also computed from the split operators `B±`.
pub fn factorized_boundary_term(
    model: &HalfCylModel,
    g: &GaugeMap,
    eps: f64,
    cutoffs: &CutoffPair,
    opts: &GetzlerOptions,
) -> Result<FactorizedTerm> {
    let (d, split) = model
        .boundary
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("model has no circle data".into()))?;
    let v = analytic_gauge_commutator(d, g)?;
    let fv = &model.f * v.entries();
    let trace_factor = block_estimate(&model.b, &v, Some(&fv), eps, opts)?;
    let (bp, bm) = split_by_f(d, split, true)?;
    let vp = restricted_commutator(&bp, split, g)?;
    let vm = restricted_commutator(&bm, split, g)?;
    let plus = block_estimate(&bp.op, &vp, None, eps, opts)?;
    let minus = block_estimate(&bm.op, &vm, None, eps, opts)?;
    let half = half_trace_integral(eps, cutoffs)?;
    Ok(FactorizedTerm {
        eps,
        trace_factor,
        half_trace: half,
        value: trace_factor * half,
        plus_estimate: plus,
        minus_estimate: minus,
        split_value: (plus - minus) * half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::{build_boundary_dirac, CircleGrid};

    #[test]
    fn half_trace_is_one_half() {
        let c = CutoffPair::new(0.5, 1.0).unwrap();
        assert!((half_trace_integral(0.01, &c).unwrap() - 0.5).abs() < 1e-10);
        for eps in [0.01, 0.02, 0.04] {
            let v = half_trace_integral(eps, &CutoffPair::default()).unwrap();
            assert!((v - 0.5).abs() < 1e-10, "{eps} {v}");
            assert!((signed_half_trace_integral(eps, &CutoffPair::default()).unwrap() + v).abs() == 0.0);
        }
    }

    #[test]
    fn sharp_cutoff_matches_erf() {
        let eps: f64 = 0.09;
        let b = 6.0 * eps.sqrt();
        let v = half_trace_integral(eps, &CutoffPair::sharp(b).unwrap()).unwrap();
        assert!((v - 0.5 * libm::erf(b / eps.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn cutoffs_nest() {
        let (p, r) = CutoffPair::default().defects(4000);
        assert!(p <= 1e-14 && r == 0.0, "{p} {r}");
        let c = CutoffPair::default();
        assert_eq!(c.mu(0.5), 1.0);
        assert_eq!(c.lambda(8.0), 0.0);
    }

    #[test]
    fn image_kernels_satisfy_boundary_conditions() {
        let ys = [0.1, 0.3, 0.7];
        for eps in [0.01, 0.05] {
            assert!(ImageHeatKernel::new(eps, ImageSign::Minus).unwrap().boundary_residual(&ys) <= 1e-6);
            assert!(ImageHeatKernel::new(eps, ImageSign::Plus).unwrap().boundary_residual(&ys) <= 1e-6);
        }
        let k = ImageHeatKernel::new(0.03, ImageSign::Plus).unwrap();
        assert_eq!(k.eval(0.2, 0.4), k.eval(0.4, 0.2));
    }

    #[test]
    fn semigroup() {
        let pts = [(0.0, 0.1), (0.2, 0.3), (0.5, 0.1)];
        for sign in [ImageSign::Plus, ImageSign::Minus] {
            assert!(semigroup_residual(0.02, 0.03, sign, &pts).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn u_identities_trivial_and_diagonal() {
        let m = HalfCylModel::new(SelfAdjointOp::diagonal(&[0.7]), identity(1)).unwrap();
        assert!(m.verify_u_identities().iter().all(|r| r.residual < 1e-15));
        let f = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(1.0, 0.0), c64(-1.0, 0.0)]));
        let m = HalfCylModel::new(SelfAdjointOp::diagonal(&[0.3, -1.2]), f).unwrap();
        assert!(m.verify_u_identities().iter().all(|r| r.residual <= 1e-13));
    }

    #[test]
    fn u_identities_random_commuting() {
        for seed in 0..3 {
            let m = HalfCylModel::random_commuting(6, seed).unwrap();
            let r = m.verify_u_identities();
            assert!(r.iter().all(|c| c.residual <= 1e-11), "{r:?}");
        }
    }

    #[test]
    fn mixed_domain() {
        let r = verify_mixed_domain(&[0.0, 2.0], 0.05, 200, None).unwrap();
        assert!(all_pass(&r.records), "{:?}", r.records);
        assert!(verify_mixed_domain(&[0.0], 0.05, 200, Some(1.0)).is_err());
    }

    #[test]
    fn factorized_term_values() {
        let grid = CircleGrid::new(65).unwrap();
        let opts = GetzlerOptions::default();
        let c = CutoffPair::default();

        let d = build_boundary_dirac(grid, 1);
        let split = BoundarySplitting::from_signs(grid, &[1.0]).unwrap();
        let m = HalfCylModel::from_circle(&d, &split).unwrap();
        let t = factorized_boundary_term(&m, &GaugeMap::identity(grid, 1), 0.04, &c, &opts).unwrap();
        assert!(t.value.abs() < 1e-12);
        let t = factorized_boundary_term(&m, &GaugeMap::scalar_winding(grid, 1), 0.04, &c, &opts).unwrap();
        assert!((t.value - 0.5).abs() < 0.01, "{t:?}");
        assert!((t.value - t.split_value).abs() < 1e-6);

        let d = build_boundary_dirac(grid, 2);
        let split = BoundarySplitting::from_signs(grid, &[1.0, -1.0]).unwrap();
        let m = HalfCylModel::from_circle(&d, &split).unwrap();
        let g = GaugeMap::diagonal_windings(grid, &[1, 0]);
        let t = factorized_boundary_term(&m, &g, 0.04, &c, &opts).unwrap();
        assert!((t.value - 0.5).abs() < 0.01, "{t:?}");
        assert!((t.value - t.split_value).abs() < 1e-6);
    }
}
