//! The Dirac operator `[[·, −∂x + B], [∂x + B, ·]]` on the cylinder
//! `S¹ × [0, L]` with local boundary conditions
//! `f¹(0) = F0 f⁰(0)` and `f¹(L) = −FL f⁰(L)`.
//!
//! Staggered grid: `f⁰` (written `u`) lives on the nodes `x_k`, `f¹` (`v`)
//! on the midpoints `x_{k+½}`. The traces `f¹(0)`, `f¹(L)` are eliminated
//! through the boundary condition, which leaves a correction `(2/h)·F` on
//! the first and last `u` rows. The operator is stored in the Euclidean
//! frame `W^{1/2} D W^{-1/2}` of the trapezoid/midpoint weights, where it is
//! a Hermitian matrix.
//!
//! When `F0`, `FL` and the gauge are independent of `θ`, the Fourier modes
//! of `−i∂θ` decouple and each mode `m` is the interval operator with
//! `B = m`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circle::{
    fourier_diff_matrix, smallest_nonzero_abs, BoundarySplitting, CircleGrid, GaugeMap,
};
use crate::error::{Error, Result};
use crate::flow::{conjugation_path, spectral_flow, Crossing, FlowOptions, SpectralFlowResult};
use crate::linalg::{
    eigh, eigvalsh, hermitian_defect, identity, max_abs, unitarity_defect, CMatrix,
    SelfAdjointOp, C64,
};

/// Required Hermiticity of the assembled operator, relative to `1 + ‖D‖_max`.
pub const ASSEMBLY_HERM_TOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalGrid {
    n_x: usize,
    length: f64,
}

impl IntervalGrid {
    pub fn new(n_x: usize, length: f64) -> Result<Self> {
        if n_x < 8 {
            return Err(Error::InvalidGrid(format!("n_x must be at least 8, got {n_x}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        Ok(Self { n_x, length })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n_x - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.spacing()
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.spacing()
    }

    /// Trapezoid weights `(½, 1, …, 1, ½)·h` on the nodes.
    pub fn node_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n_x];
        w[0] = 0.5 * h;
        w[self.n_x - 1] = 0.5 * h;
        w
    }

    pub fn midpoint_weights(&self) -> Vec<f64> {
        vec![self.spacing(); self.n_x - 1]
    }

    /// Number of unknowns per transverse degree of freedom.
    pub fn unknowns(&self) -> usize {
        2 * self.n_x - 1
    }
}

/// Euclidean-frame staggered operator for a transverse space of size `t`.
///
/// `offdiag(k)` returns the pair of `t × t` blocks coupling midpoint `k` to
/// the nodes `k` and `k + 1`; the `u ← v` blocks are the weighted adjoints.
fn staggered(
    grid: &IntervalGrid,
    t: usize,
    offdiag: impl Fn(usize) -> (CMatrix, CMatrix),
    sigma0: Option<&CMatrix>,
    sigma_l: Option<&CMatrix>,
) -> CMatrix {
    let n = grid.n_x();
    let wu = grid.node_weights();
    let wv = grid.midpoint_weights();
    let dim = (2 * n - 1) * t;
    let uo = |k: usize| k * t;
    let vo = |k: usize| (n + k) * t;
    let mut m = CMatrix::zeros(dim, dim);
    for k in 0..n - 1 {
        let (left, right) = offdiag(k);
        for (node, block) in [(k, left), (k + 1, right)] {
            let down = (wv[k] / wu[node]).sqrt();
            m.view_mut((vo(k), uo(node)), (t, t)).copy_from(&(&block * C64::from(down)));
            // weighted adjoint wu⁻¹·blockᴴ·wv, then the same similarity
            let adj = block.adjoint() * C64::from(wv[k] / wu[node]);
            let up = (wu[node] / wv[k]).sqrt();
            m.view_mut((uo(node), vo(k)), (t, t)).copy_from(&(adj * C64::from(up)));
        }
    }
    let h = grid.spacing();
    if let Some(s) = sigma0 {
        m.view_mut((0, 0), (t, t)).copy_from(&(s * C64::from(2.0 / h)));
    }
    if let Some(s) = sigma_l {
        m.view_mut((uo(n - 1), uo(n - 1)), (t, t)).copy_from(&(s * C64::from(2.0 / h)));
    }
    m
}

fn dirac_blocks(h: f64, b: &CMatrix) -> impl Fn(usize) -> (CMatrix, CMatrix) + '_ {
    move |_| {
        let t = b.nrows();
        let id = identity(t) * C64::from(1.0 / h);
        let half_b = b * C64::from(0.5);
        (&half_b - &id, &half_b + &id)
    }
}

fn block_diagonal(blocks: &[CMatrix]) -> CMatrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = CMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let d = b.nrows();
        m.view_mut((off, off), (d, d)).copy_from(b);
        off += d;
    }
    m
}

/// Assembled cylinder problem.
#[derive(Clone, Debug)]
pub struct CylinderBVP {
    pub circle: CircleGrid,
    pub interval: IntervalGrid,
    pub fiber_dim: usize,
    pub f0: BoundarySplitting,
    pub fl: BoundarySplitting,
}

impl CylinderBVP {
    /// Validates the boundary data; with `product` set also checks
    /// `F² = id` and that `F` is constant along each boundary circle.
    pub fn assemble(
        circle: CircleGrid,
        interval: IntervalGrid,
        fiber_dim: usize,
        f0: BoundarySplitting,
        fl: BoundarySplitting,
        product: bool,
    ) -> Result<Self> {
        for (name, f) in [("F0", &f0), ("FL", &fl)] {
            if f.fiber_dim() != fiber_dim || f.f_values.len() != circle.n_theta() {
                return Err(Error::InvalidSplitting(format!("{name} does not match the grid")));
            }
            if product {
                if f.involution_defect() > 1e-12 {
                    return Err(Error::InvalidSplitting(format!("{name}² ≠ id")));
                }
                if !f.is_constant() {
                    return Err(Error::InvalidSplitting(format!(
                        "{name} varies along the circle, so [B, {name}] ≠ 0"
                    )));
                }
            }
        }
        Ok(Self {
            circle,
            interval,
            fiber_dim,
            f0,
            fl,
        })
    }

    /// Scalar-sign boundary data `F0 = s0·id`, `FL = sl·id`.
    pub fn with_signs(
        n_theta: usize,
        n_x: usize,
        length: f64,
        fiber_dim: usize,
        s0: f64,
        sl: f64,
    ) -> Result<Self> {
        let circle = CircleGrid::new(n_theta)?;
        let interval = IntervalGrid::new(n_x, length)?;
        let f0 = BoundarySplitting::from_signs(circle, &vec![s0; fiber_dim])?;
        let fl = BoundarySplitting::from_signs(circle, &vec![sl; fiber_dim])?;
        Self::assemble(circle, interval, fiber_dim, f0, fl, true)
    }

    pub fn transverse_dim(&self) -> usize {
        self.circle.n_theta() * self.fiber_dim
    }

    pub fn dim(&self) -> usize {
        self.interval.unknowns() * self.transverse_dim()
    }

    pub fn mode_dim(&self) -> usize {
        self.interval.unknowns() * self.fiber_dim
    }

    pub fn modes(&self) -> Vec<i64> {
        let m = self.circle.max_mode();
        (-m..=m).collect()
    }

    pub fn is_mode_separable(&self) -> bool {
        self.f0.is_constant() && self.fl.is_constant()
    }

    fn boundary_theta(&self) -> CMatrix {
        (fourier_diff_matrix(self.circle.n_theta()) * C64::new(0.0, -1.0))
            .kronecker(&identity(self.fiber_dim))
    }

    /// The Euclidean-frame matrix before symmetrisation.
    pub fn raw_full(&self) -> CMatrix {
        let b = self.boundary_theta();
        let s0 = block_diagonal(&self.f0.f_values);
        let sl = block_diagonal(&self.fl.f_values);
        staggered(
            &self.interval,
            self.transverse_dim(),
            dirac_blocks(self.interval.spacing(), &b),
            Some(&s0),
            Some(&sl),
        )
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let m = self.raw_full();
        hermitian_defect(&m) / (1.0 + max_abs(&m))
    }

    /// `D_F` on the whole grid, `n_theta·(2n_x − 1)·n` unknowns.
    pub fn dirac_full(&self) -> Result<SelfAdjointOp> {
        SelfAdjointOp::with_tolerance(self.raw_full(), ASSEMBLY_HERM_TOL)
    }

    /// The block of `D_F` on Fourier mode `m`.
    pub fn dirac_mode(&self, m: i64) -> Result<SelfAdjointOp> {
        if !self.is_mode_separable() {
            return Err(Error::InvalidParameter(
                "boundary data depends on θ; modes do not decouple".into(),
            ));
        }
        let n = self.fiber_dim;
        let b = identity(n) * C64::from(m as f64);
        let raw = staggered(
            &self.interval,
            n,
            dirac_blocks(self.interval.spacing(), &b),
            Some(&self.f0.f_values[0]),
            Some(&self.fl.f_values[0]),
        );
        SelfAdjointOp::with_tolerance(raw, ASSEMBLY_HERM_TOL)
    }

    /// Grading `+1` on `f⁰`, `−1` on `f¹`, for `t` transverse unknowns.
    fn gamma_diagonal(&self, t: usize) -> Vec<f64> {
        let n = self.interval.n_x();
        let mut g = vec![1.0; n * t];
        g.extend(std::iter::repeat(-1.0).take((n - 1) * t));
        g
    }

    pub fn gamma_full(&self) -> SelfAdjointOp {
        SelfAdjointOp::diagonal(&self.gamma_diagonal(self.transverse_dim()))
    }

    pub fn gamma_mode(&self) -> SelfAdjointOp {
        SelfAdjointOp::diagonal(&self.gamma_diagonal(self.fiber_dim))
    }

    /// Extended unknowns `(u, v, f¹(0), f¹(L))` and the unconstrained
    /// operator from them to `(u, v)`, in the weighted frame.
    pub fn unconstrained_operator(&self) -> CMatrix {
        let t = self.transverse_dim();
        let n = self.interval.n_x();
        let h = self.interval.spacing();
        let b = self.boundary_theta();
        let base = (2 * n - 1) * t;
        let inner = staggered(&self.interval, t, dirac_blocks(h, &b), None, None);
        // back to the weighted frame: W^{-1/2} M W^{1/2}
        let w = self.weights();
        let mut d = CMatrix::zeros(base, base + 2 * t);
        for c in 0..base {
            for r in 0..base {
                d[(r, c)] = inner[(r, c)] * (w[c] / w[r]).sqrt();
            }
        }
        let s = C64::from(2.0 / h);
        for a in 0..t {
            d[(a, base + a)] = s;
            d[((n - 1) * t + a, base + t + a)] = -s;
        }
        d
    }

    /// Weights of the `(u, v)` unknowns, including the transverse factor.
    pub fn weights(&self) -> Vec<f64> {
        let t = self.transverse_dim();
        let dth = self.circle.spacing();
        let mut w = Vec::with_capacity(self.dim());
        for x in self.interval.node_weights() {
            w.extend(std::iter::repeat(x * dth).take(t));
        }
        for x in self.interval.midpoint_weights() {
            w.extend(std::iter::repeat(x * dth).take(t));
        }
        w
    }

    /// Embedding of the boundary-condition subspace into the extended
    /// unknowns, columns scaled to be orthonormal for weights
    /// `(w_u, w_v, 0, 0)`.
    pub fn constraint_embedding(&self) -> CMatrix {
        let t = self.transverse_dim();
        let n = self.interval.n_x();
        let base = self.dim();
        let w = self.weights();
        let f0 = block_diagonal(&self.f0.f_values);
        let fl = block_diagonal(&self.fl.f_values);
        let mut q = CMatrix::zeros(base + 2 * t, base);
        for c in 0..base {
            q[(c, c)] = C64::from(1.0 / w[c].sqrt());
        }
        for a in 0..t {
            for b in 0..t {
                q[(base + a, b)] = f0[(a, b)] / w[b].sqrt();
                let c = (n - 1) * t + b;
                q[(base + t + a, c)] = -fl[(a, b)] / w[c].sqrt();
            }
        }
        q
    }
}

/// Smooth unitary gauge on the cylinder.
///
/// Stores `g` on the nodes and `K = −i g⁻¹∂θg + g⁻¹∂xg` on the midpoints,
/// both indexed `k·n_theta + j`.
#[derive(Clone, Debug)]
pub struct CylinderGauge {
    pub circle: CircleGrid,
    pub interval: IntervalGrid,
    pub fiber_dim: usize,
    node_values: Vec<CMatrix>,
    mid_k: Vec<CMatrix>,
    boundary0: GaugeMap,
    boundary_l: GaugeMap,
}

impl CylinderGauge {
    /// The `x`-independent extension of a loop.
    pub fn from_circle(interval: IntervalGrid, g: &GaugeMap) -> Self {
        let nt = g.grid.n_theta();
        let (nx, n) = (interval.n_x(), g.fiber_dim);
        let node_values = (0..nx).flat_map(|_| g.values.iter().cloned()).collect();
        let ks: Vec<CMatrix> = (0..nt).map(|j| g.log_derivative(j)).collect();
        let mid_k = (0..nx - 1).flat_map(|_| ks.iter().cloned()).collect();
        Self {
            circle: g.grid,
            interval,
            fiber_dim: n,
            node_values,
            mid_k,
            boundary0: g.clone(),
            boundary_l: g.clone(),
        }
    }

    /// From `g(θ, x)` and its partial derivatives. `g` must be unitary and
    /// independent of `x` within two cells of each end.
    pub fn from_fn(
        circle: CircleGrid,
        interval: IntervalGrid,
        fiber_dim: usize,
        g: impl Fn(f64, f64) -> CMatrix,
        g_theta: impl Fn(f64, f64) -> CMatrix,
        g_x: impl Fn(f64, f64) -> CMatrix,
    ) -> Result<Self> {
        let nt = circle.n_theta();
        let nx = interval.n_x();
        let thetas = circle.nodes();
        let mut node_values = Vec::with_capacity(nx * nt);
        for k in 0..nx {
            for &th in &thetas {
                let v = g(th, interval.node(k));
                let defect = unitarity_defect(&v);
                if defect > 1e-10 {
                    return Err(Error::NotUnitary {
                        defect,
                        tolerance: 1e-10,
                    });
                }
                node_values.push(v);
            }
        }
        let mut mid_k = Vec::with_capacity((nx - 1) * nt);
        for k in 0..nx - 1 {
            let x = interval.midpoint(k);
            let collar = k < 2 || k + 3 > nx - 1;
            for &th in &thetas {
                let gv = g(th, x);
                let gi = gv.adjoint();
                let gx = g_x(th, x);
                if collar && max_abs(&gx) > 1e-12 {
                    return Err(Error::InvalidGauge(format!(
                        "gauge depends on x inside the boundary collar (midpoint {k})"
                    )));
                }
                let kt = &gi * g_theta(th, x) * C64::new(0.0, -1.0);
                mid_k.push(kt + &gi * gx);
            }
        }
        for k in [1usize, 2, nx - 2, nx - 3] {
            let edge = if k < nx / 2 { 0 } else { nx - 1 };
            for j in 0..nt {
                let d = max_abs(&(&node_values[k * nt + j] - &node_values[edge * nt + j]));
                if d > 1e-12 {
                    return Err(Error::InvalidGauge(format!(
                        "gauge depends on x inside the boundary collar (node {k})"
                    )));
                }
            }
        }
        let boundary = |x: f64| {
            GaugeMap::from_fn(circle, fiber_dim, |t| g(t, x), |t| g_theta(t, x))
        };
        Ok(Self {
            circle,
            interval,
            fiber_dim,
            node_values,
            mid_k,
            boundary0: boundary(0.0)?,
            boundary_l: boundary(interval.length())?,
        })
    }

    /// The loop at `x = 0` (`false`) or `x = L` (`true`).
    pub fn boundary(&self, at_l: bool) -> &GaugeMap {
        if at_l {
            &self.boundary_l
        } else {
            &self.boundary0
        }
    }

    pub fn node_value(&self, k: usize, j: usize) -> &CMatrix {
        &self.node_values[k * self.circle.n_theta() + j]
    }

    /// `K` is the same at every θ node for each midpoint.
    pub fn is_mode_separable(&self) -> bool {
        let nt = self.circle.n_theta();
        self.mid_k.chunks(nt).all(|row| {
            row.iter().all(|k| max_abs(&(k - &row[0])) <= 1e-12)
        })
    }

    pub fn is_identity(&self) -> bool {
        let n = self.fiber_dim;
        self.node_values.iter().all(|g| max_abs(&(g - identity(n))) == 0.0)
            && self.mid_k.iter().all(|k| max_abs(k) == 0.0)
    }

    /// `blockdiag g` on the extended unknowns `(u, v, f¹(0), f¹(L))`.
    pub fn extended_multiplication(&self) -> CMatrix {
        let nt = self.circle.n_theta();
        let nx = self.interval.n_x();
        let n = self.fiber_dim;
        let t = nt * n;
        let mut blocks = Vec::with_capacity(2 * nx + 1);
        for k in 0..nx {
            blocks.push(block_diagonal(&self.node_values[k * nt..(k + 1) * nt]));
        }
        for k in 0..nx - 1 {
            // midpoint values: average of the neighbours, exact in the collar
            let row: Vec<CMatrix> = (0..nt)
                .map(|j| {
                    (self.node_value(k, j) + self.node_value(k + 1, j)) * C64::from(0.5)
                })
                .collect();
            blocks.push(block_diagonal(&row));
        }
        blocks.push(block_diagonal(&self.node_values[..nt]));
        blocks.push(block_diagonal(&self.node_values[(nx - 1) * nt..]));
        let m = block_diagonal(&blocks);
        debug_assert_eq!(m.nrows(), (2 * nx + 1) * t);
        m
    }

    fn check(&self, bvp: &CylinderBVP) -> Result<()> {
        if self.circle != bvp.circle || self.interval != bvp.interval || self.fiber_dim != bvp.fiber_dim {
            return Err(Error::InvalidGauge("gauge and problem use different grids".into()));
        }
        for (name, split, g) in [("F0", &bvp.f0, &self.boundary0), ("FL", &bvp.fl, &self.boundary_l)] {
            let defect = split.gauge_commutation_defect(g);
            if defect > 1e-8 {
                return Err(Error::InvalidGauge(format!(
                    "gauge does not commute with {name} ({defect:.3e}), so it leaves the domain"
                )));
            }
        }
        Ok(())
    }
}

/// `g⁻¹[D, g]` discretised pointwise on the whole grid.
pub fn gauge_commutator_2d(bvp: &CylinderBVP, g: &CylinderGauge) -> Result<SelfAdjointOp> {
    g.check(bvp)?;
    let nt = bvp.circle.n_theta();
    let t = bvp.transverse_dim();
    let rows: Vec<CMatrix> = (0..bvp.interval.n_x() - 1)
        .map(|k| block_diagonal(&g.mid_k[k * nt..(k + 1) * nt]))
        .collect();
    let raw = staggered(
        &bvp.interval,
        t,
        |k| {
            let half = &rows[k] * C64::from(0.5);
            (half.clone(), half)
        },
        None,
        None,
    );
    SelfAdjointOp::with_tolerance(raw, ASSEMBLY_HERM_TOL)
}

/// The block of the gauge commutator on one Fourier mode.
pub fn gauge_commutator_mode(bvp: &CylinderBVP, g: &CylinderGauge) -> Result<SelfAdjointOp> {
    g.check(bvp)?;
    if !g.is_mode_separable() || !bvp.is_mode_separable() {
        return Err(Error::InvalidParameter("gauge depends on θ; modes do not decouple".into()));
    }
    let nt = bvp.circle.n_theta();
    let ks: Vec<&CMatrix> = (0..bvp.interval.n_x() - 1).map(|k| &g.mid_k[k * nt]).collect();
    let raw = staggered(
        &bvp.interval,
        bvp.fiber_dim,
        |k| {
            let half = ks[k] * C64::from(0.5);
            (half.clone(), half)
        },
        None,
        None,
    );
    SelfAdjointOp::with_tolerance(raw, ASSEMBLY_HERM_TOL)
}

/// Independent blocks `(label, D_b, V_b)` of the flow `D_F + u·V`.
pub fn flow_blocks(
    bvp: &CylinderBVP,
    g: &CylinderGauge,
) -> Result<Vec<(Option<i64>, SelfAdjointOp, SelfAdjointOp)>> {
    if bvp.is_mode_separable() && g.is_mode_separable() {
        let v = gauge_commutator_mode(bvp, g)?;
        bvp.modes()
            .into_iter()
            .map(|m| Ok((Some(m), bvp.dirac_mode(m)?, v.clone())))
            .collect()
    } else {
        Ok(vec![(None, bvp.dirac_full()?, gauge_commutator_2d(bvp, g)?)])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockFlow {
    pub mode: Option<i64>,
    pub branch_offset: usize,
    pub flow: SpectralFlowResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylinderFlow {
    pub value: i64,
    pub shift: Option<f64>,
    pub blocks: Vec<BlockFlow>,
    /// All crossings, branch indices offset by the block position.
    pub crossings: Vec<Crossing>,
    pub min_abs_eigenvalue: f64,
    pub gap_lower_bound: f64,
}

fn run_blocks(
    blocks: &[(Option<i64>, SelfAdjointOp, SelfAdjointOp)],
    shift: f64,
    opts: &FlowOptions,
) -> Vec<Result<SpectralFlowResult>> {
    let one = |(_, d, v): &(Option<i64>, SelfAdjointOp, SelfAdjointOp)| {
        let d = if shift == 0.0 { d.clone() } else { d.shifted(shift) };
        spectral_flow(&conjugation_path(&d, v)?, opts)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        blocks.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        blocks.iter().map(one).collect()
    }
}

/// Spectral flow of `D_F + u·g⁻¹[D_F, g]`, summed over decoupled modes.
///
/// If any block has a branch pinned at zero, every block is shifted by the
/// same `c = ¼·(smallest nonzero |λ| of D_F)`.
pub fn cylinder_sf(bvp: &CylinderBVP, g: &CylinderGauge, opts: &FlowOptions) -> Result<CylinderFlow> {
    let blocks = flow_blocks(bvp, g)?;
    let mut shift = None;
    let mut results = run_blocks(&blocks, 0.0, opts);
    if results.iter().any(|r| matches!(r, Err(Error::PinnedZero { .. }))) {
        let mut c = f64::INFINITY;
        for (_, d, _) in &blocks {
            c = c.min(smallest_nonzero_abs(d)?);
        }
        let c = 0.25 * c;
        shift = Some(c);
        results = run_blocks(&blocks, c, opts);
    }
    let mut out = CylinderFlow {
        value: 0,
        shift,
        blocks: Vec::with_capacity(blocks.len()),
        crossings: Vec::new(),
        min_abs_eigenvalue: f64::INFINITY,
        gap_lower_bound: f64::INFINITY,
    };
    let mut offset = 0;
    for ((mode, d, _), r) in blocks.iter().zip(results) {
        let flow = r?;
        out.value += flow.value;
        out.min_abs_eigenvalue = out.min_abs_eigenvalue.min(flow.min_abs_eigenvalue);
        out.gap_lower_bound = out.gap_lower_bound.min(flow.gap_lower_bound);
        out.crossings.extend(flow.crossings.iter().map(|c| Crossing {
            branch: c.branch + offset,
            ..c.clone()
        }));
        out.blocks.push(BlockFlow {
            mode: *mode,
            branch_offset: offset,
            flow,
        });
        offset += d.dim();
    }
    out.crossings.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.branch.cmp(&b.branch)));
    Ok(out)
}

/// Smallest `|λ|` of `D_F + u·V` at each `u`.
pub fn path_spectral_gaps(bvp: &CylinderBVP, g: &CylinderGauge, u_grid: &[f64]) -> Result<Vec<f64>> {
    let blocks = flow_blocks(bvp, g)?;
    u_grid
        .iter()
        .map(|&u| {
            let mut m = f64::INFINITY;
            for (_, d, v) in &blocks {
                for l in eigvalsh(&d.add_scaled(v, u)?)? {
                    m = m.min(l.abs());
                }
            }
            Ok(m)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaReport {
    pub u_grid: Vec<f64>,
    /// `min σ(D_F(u) + γ)` per `u`.
    pub min_singular_values: Vec<f64>,
    /// `‖γD(u) + D(u)γ‖_max` away from the two boundary node rows.
    pub interior_anticommutator: f64,
    /// The same including the boundary rows, where `(2/h)·F` is even.
    pub boundary_anticommutator: f64,
    pub gamma_square_defect: f64,
    pub pass: bool,
}

/// Invertibility of `D_F(u) + γ` along the path.
pub fn gamma_deformation_check(
    bvp: &CylinderBVP,
    g: &CylinderGauge,
    u_grid: &[f64],
) -> Result<GammaReport> {
    let blocks = flow_blocks(bvp, g)?;
    let full_size = blocks.len() == 1 && blocks[0].0.is_none();
    let gamma = if full_size { bvp.gamma_full() } else { bvp.gamma_mode() };
    let t = if full_size { bvp.transverse_dim() } else { bvp.fiber_dim };
    let n = bvp.interval.n_x();
    let mut on_boundary = vec![false; gamma.dim()];
    for r in (0..t).chain((n - 1) * t..n * t) {
        on_boundary[r] = true;
    }
    let gd = gamma.entries().diagonal();

    let mut min_sv = Vec::with_capacity(u_grid.len());
    let mut interior = 0.0f64;
    let mut boundary = 0.0f64;
    for &u in u_grid {
        let mut m = f64::INFINITY;
        for (_, d, v) in &blocks {
            let du = d.add_scaled(v, u)?;
            for l in eigvalsh(&du.add_scaled(&gamma, 1.0)?)? {
                m = m.min(l.abs());
            }
            let e = du.entries();
            let dim = e.nrows();
            for c in 0..dim {
                for r in 0..dim {
                    let z = (e[(r, c)] * (gd[r] + gd[c])).norm();
                    boundary = boundary.max(z);
                    if !on_boundary[r] && !on_boundary[c] {
                        interior = interior.max(z);
                    }
                }
            }
        }
        min_sv.push(m);
    }
    let g2 = gamma.entries() * gamma.entries() - identity(gamma.dim());
    let pass = min_sv.iter().all(|&s| s > 0.0) && interior <= 1e-10;
    Ok(GammaReport {
        u_grid: u_grid.to_vec(),
        min_singular_values: min_sv,
        interior_anticommutator: interior,
        boundary_anticommutator: boundary,
        gamma_square_defect: max_abs(&g2),
        pass,
    })
}

/// Largest pointwise supertrace `|Str(V e^{−εD_F²})(x)|` over nodes at
/// distance at least `depth` from both ends, summed around the circle.
pub fn interior_supertrace(
    bvp: &CylinderBVP,
    g: &CylinderGauge,
    eps: f64,
    depth: f64,
) -> Result<f64> {
    let blocks = flow_blocks(bvp, g)?;
    let full_size = blocks[0].0.is_none();
    let t = if full_size { bvp.transverse_dim() } else { bvp.fiber_dim };
    let grid = bvp.interval;
    let n = grid.n_x();
    let length = grid.length();
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for k in 0..n {
        let x = grid.node(k);
        if x >= depth && x <= length - depth {
            rows.push((k, 1.0));
        }
    }
    for k in 0..n - 1 {
        let x = grid.midpoint(k);
        if x >= depth && x <= length - depth {
            rows.push((n + k, -1.0));
        }
    }
    let mut per_row = vec![0.0f64; rows.len()];
    for (_, d, v) in &blocks {
        let s = eigh(d)?;
        let heat = s.apply_function(|l| C64::from((-eps * l * l).exp()));
        let p = v.entries() * heat;
        for (i, &(r, sign)) in rows.iter().enumerate() {
            for a in 0..t {
                per_row[i] += sign * p[(r * t + a, r * t + a)].re;
            }
        }
    }
    Ok(per_row.iter().fold(0.0, |acc, v| acc.max(v.abs())))
}

/// Secular function of the mode operator `[[·, −∂x + μ], [∂x + μ, ·]]` on
/// `[0, L]` with `f¹(0) = s0 f⁰(0)`, `f¹(L) = −sL f⁰(L)`.
pub fn secular(mu: f64, s0: f64, sl: f64, length: f64, lambda: f64) -> f64 {
    let w2 = lambda * lambda - mu * mu;
    let (c, s) = if w2 > 0.0 {
        let w = w2.sqrt();
        ((w * length).cos(), (w * length).sin() / w)
    } else if w2 < 0.0 {
        let k = (-w2).sqrt();
        ((k * length).cosh(), (k * length).sinh() / k)
    } else {
        (1.0, length)
    };
    c * (s0 + sl) + s * (mu * s0 - lambda + sl * lambda * s0 - sl * mu)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeSpectrumOracle {
    pub mu: f64,
    pub f0_sign: f64,
    pub fl_sign: f64,
    pub length: f64,
    pub window: (f64, f64),
    pub roots: Vec<f64>,
    pub max_residual: f64,
}

pub const ORACLE_SCAN_STEP: f64 = 1e-3;

/// Eigenvalues of the mode operator in `window`, from sign changes of the
/// secular function sampled every [`ORACLE_SCAN_STEP`] and refined by
/// bisection.
pub fn mode_oracle(mu: f64, s0: f64, sl: f64, length: f64, window: (f64, f64)) -> Result<ModeSpectrumOracle> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidParameter("empty window".into()));
    }
    let f = |l: f64| secular(mu, s0, sl, length, l);
    let steps = ((hi - lo) / ORACLE_SCAN_STEP).ceil() as usize;
    let at = |i: usize| if i == steps { hi } else { lo + i as f64 * ORACLE_SCAN_STEP };
    let mut roots = Vec::new();
    let mut prev = f(at(0));
    if prev == 0.0 {
        roots.push(at(0));
    }
    for i in 1..=steps {
        let x = at(i);
        let fx = f(x);
        if fx == 0.0 {
            roots.push(x);
        } else if prev != 0.0 && (prev < 0.0) != (fx < 0.0) {
            let (mut a, mut b, mut fa) = (at(i - 1), x, prev);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                let fm = f(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev = fx;
    }
    let max_residual = roots.iter().fold(0.0f64, |acc, &r| acc.max(f(r).abs()));
    if max_residual > 1e-10 {
        return Err(Error::RootFinding(format!(
            "secular residual {max_residual:.3e} above 1e-10"
        )));
    }
    Ok(ModeSpectrumOracle {
        mu,
        f0_sign: s0,
        fl_sign: sl,
        length,
        window,
        roots,
        max_residual,
    })
}

/// Largest distance from each oracle root to the nearest eigenvalue.
pub fn oracle_deviation(oracle: &ModeSpectrumOracle, eigenvalues: &[f64]) -> f64 {
    oracle
        .roots
        .iter()
        .map(|&r| {
            eigenvalues
                .iter()
                .fold(f64::INFINITY, |acc, &l| acc.min((l - r).abs()))
        })
        .fold(0.0, f64::max)
}

/// The exact continuum eigenvalues `±√(μ² + (jπ/L)²)` (and `μ` itself) for
/// the mixed conditions, used to cross-check the root finder.
pub fn mixed_condition_spectrum(mu: f64, length: f64, j_max: usize) -> Vec<f64> {
    let mut out = vec![mu];
    for j in 1..=j_max {
        let w = j as f64 * PI / length;
        let r = (mu * mu + w * w).sqrt();
        out.push(-r);
        out.push(r);
    }
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: i64,
    pub n_x: Vec<usize>,
    pub deviations: Vec<f64>,
    /// Least-squares slope of `−log₂(deviation)` against `log₂(n_x)`.
    pub slope: f64,
}

/// Convergence of the mode-`m` eigenvalues in `window` to the secular roots.
pub fn mode_convergence(
    m: i64,
    s0: f64,
    sl: f64,
    length: f64,
    window: (f64, f64),
    n_x: &[usize],
) -> Result<ConvergenceReport> {
    if n_x.len() < 2 {
        return Err(Error::InvalidParameter("need at least two resolutions".into()));
    }
    let oracle = mode_oracle(m as f64, s0, sl, length, window)?;
    let n_theta = 2 * m.unsigned_abs() as usize + 1;
    let mut deviations = Vec::with_capacity(n_x.len());
    for &n in n_x {
        let bvp = CylinderBVP::with_signs(n_theta, n, length, 1, s0, sl)?;
        deviations.push(oracle_deviation(&oracle, &eigvalsh(&bvp.dirac_mode(m)?)?));
    }
    let xs: Vec<f64> = n_x.iter().map(|&n| (n as f64).log2()).collect();
    let ys: Vec<f64> = deviations.iter().map(|d| -d.log2()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ConvergenceReport {
        mode: m,
        n_x: n_x.to_vec(),
        deviations,
        slope: num / den,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_weights_sum_to_length() {
        let g = IntervalGrid::new(16, 1.3).unwrap();
        let s: f64 = g.node_weights().iter().sum();
        assert!((s - 1.3).abs() < 1e-14);
        assert!(IntervalGrid::new(4, 1.0).is_err());
    }

    #[test]
    fn small_assembly_is_hermitian() {
        let bvp = CylinderBVP::with_signs(17, 16, 1.0, 1, 1.0, 1.0).unwrap();
        assert!(bvp.hermiticity_residual() <= 1e-11);
        assert_eq!(bvp.dim(), 17 * 31);
    }

    #[test]
    fn modes_reproduce_full_spectrum() {
        let bvp = CylinderBVP::with_signs(5, 8, 1.0, 1, 1.0, -1.0).unwrap();
        let mut full = eigvalsh(&bvp.dirac_full().unwrap()).unwrap();
        let mut modes: Vec<f64> = bvp
            .modes()
            .into_iter()
            .flat_map(|m| eigvalsh(&bvp.dirac_mode(m).unwrap()).unwrap())
            .collect();
        full.sort_by(f64::total_cmp);
        modes.sort_by(f64::total_cmp);
        for (a, b) in full.iter().zip(&modes) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mixed_conditions_have_exact_chiral_branch() {
        let bvp = CylinderBVP::with_signs(5, 16, 1.0, 1, 1.0, -1.0).unwrap();
        for m in [-2i64, 0, 1] {
            let l = eigvalsh(&bvp.dirac_mode(m).unwrap()).unwrap();
            let best = l.iter().fold(f64::INFINITY, |a, &x| a.min((x - m as f64).abs()));
            assert!(best < 1e-12, "mode {m}: {best}");
        }
    }

    #[test]
    fn secular_roots_match_closed_form() {
        let o = mode_oracle(0.7, 1.0, -1.0, 1.0, (-10.0, 10.0)).unwrap();
        let exact: Vec<f64> = mixed_condition_spectrum(0.7, 1.0, 4)
            .into_iter()
            .filter(|x| x.abs() < 10.0)
            .collect();
        assert_eq!(o.roots.len(), exact.len());
        for (a, b) in o.roots.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_conditions_symmetric_roots() {
        let o = mode_oracle(0.0, 1.0, 1.0, 1.0, (-9.0, 9.0)).unwrap();
        let n = o.roots.len();
        for i in 0..n {
            assert!((o.roots[i] + o.roots[n - 1 - i]).abs() < 1e-10);
        }
        assert!((o.roots[n / 2] - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_gauge_commutator_norm() {
        let bvp = CylinderBVP::with_signs(9, 10, 1.0, 1, 1.0, -1.0).unwrap();
        let g = CylinderGauge::from_circle(bvp.interval, &GaugeMap::scalar_winding(bvp.circle, 2));
        let v = gauge_commutator_2d(&bvp, &g).unwrap();
        let top = eigvalsh(&v).unwrap().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!((top - 2.0).abs() < 1e-8);
        let id = CylinderGauge::from_circle(bvp.interval, &GaugeMap::identity(bvp.circle, 1));
        assert_eq!(max_abs(gauge_commutator_2d(&bvp, &id).unwrap().entries()), 0.0);
    }

    #[test]
    fn collar_dependence_rejected() {
        let circle = CircleGrid::new(5).unwrap();
        let interval = IntervalGrid::new(10, 1.0).unwrap();
        let phase = |x: f64| CMatrix::from_element(1, 1, C64::from_polar(1.0, x));
        let r = CylinderGauge::from_fn(
            circle,
            interval,
            1,
            |_, x| phase(x),
            |_, _| CMatrix::zeros(1, 1),
            |_, x| phase(x) * C64::new(0.0, 1.0),
        );
        assert!(matches!(r, Err(Error::InvalidGauge(_))));
    }

    #[test]
    fn definite_conditions_invertible() {
        let bvp = CylinderBVP::with_signs(9, 16, 1.0, 1, 1.0, 1.0).unwrap();
        let gap = bvp
            .modes()
            .into_iter()
            .flat_map(|m| eigvalsh(&bvp.dirac_mode(m).unwrap()).unwrap())
            .fold(f64::INFINITY, |a, l| a.min(l.abs()));
        assert!(gap > 1.5);
    }

    #[test]
    fn second_order_against_secular_roots() {
        for (s0, sl) in [(1.0, -1.0), (1.0, 1.0)] {
            let r = mode_convergence(1, s0, sl, 1.0, (-8.0, 8.0), &[16, 32, 64]).unwrap();
            assert!((r.slope - 2.0).abs() < 0.3, "{r:?}");
        }
    }
}
