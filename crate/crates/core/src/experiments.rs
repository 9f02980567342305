//! Scenario files, runs and their records.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::circle::{
    analytic_gauge_commutator, boundary_sf, build_boundary_dirac, build_oriented_dirac,
    flow_with_shift, restricted_commutator, split_by_f, BoundarySplitting, CircleGrid, GaugeMap,
    GaugeSpec,
};
use crate::cylinder::{
    cylinder_sf, gamma_deformation_check, mode_convergence, path_spectral_gaps, CylinderBVP,
    CylinderGauge, IntervalGrid,
};
use crate::error::{Error, Result};
use crate::flow::{Crossing, FlowOptions};
use crate::getzler::{GetzlerOptions, GetzlerSolver, SweepPoint};
use crate::halfcyl::{
    factorized_boundary_term, half_trace_integral, semigroup_residual, verify_mixed_domain,
    CheckRecord, CutoffPair, HalfCylModel, ImageHeatKernel, ImageSign,
};
use crate::linalg::{c64, CMatrix, SelfAdjointOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    CircleSf,
    CylinderTheorem,
    Cobordism,
    GetzlerSweep,
    HalfcylChecks,
    GammaCheck,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub value: f64,
    #[serde(default)]
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    #[serde(default)]
    pub parameters: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Expected>,
}

/// Either `{"windings": [k, …]}` for `diag(e^{ikθ})` or a full series.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaugeInput {
    Windings { windings: Vec<i64> },
    Series(GaugeSpec),
}

impl GaugeInput {
    pub fn spec(&self) -> GaugeSpec {
        match self {
            GaugeInput::Windings { windings } => GaugeSpec::diagonal(windings),
            GaugeInput::Series(s) => s.clone(),
        }
    }

    pub fn fiber_dim(&self) -> usize {
        match self {
            GaugeInput::Windings { windings } => windings.len(),
            GaugeInput::Series(s) => s.fiber_dim,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleParams {
    pub n_theta: usize,
    pub gauge: GaugeInput,
    #[serde(default = "one")]
    pub orientation: f64,
}

fn default_eps_grid() -> Vec<f64> {
    vec![1.0, 4.0, 9.0, 16.0, 25.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub n_theta: usize,
    pub gauge: GaugeInput,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
}

fn default_u_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

/// `F0`, `FL` are given as the diagonal signs of a constant endomorphism.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderParams {
    pub n_theta: usize,
    pub n_x: usize,
    #[serde(default = "one")]
    pub length: f64,
    pub f0: Vec<f64>,
    pub fl: Vec<f64>,
    pub gauge: GaugeInput,
    /// Rerun at `2·n_x` and require the same integer.
    #[serde(default)]
    pub check_doubling: bool,
    #[serde(default = "default_u_grid")]
    pub u_grid: Vec<f64>,
}

fn default_half_eps() -> Vec<f64> {
    vec![0.01, 0.02, 0.04]
}
fn default_a() -> f64 {
    0.5
}
fn default_b() -> f64 {
    8.0
}
fn default_factor_eps() -> f64 {
    0.04
}
fn default_factor_n_theta() -> usize {
    65
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfcylParams {
    #[serde(default = "default_half_eps")]
    pub eps_values: Vec<f64>,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_factor_eps")]
    pub factor_eps: f64,
    #[serde(default = "default_factor_n_theta")]
    pub factor_n_theta: usize,
}

impl Default for HalfcylParams {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("all fields have defaults")
    }
}

/// Parsed and validated parameters.
#[derive(Clone, Debug)]
pub enum Params {
    CircleSf(CircleParams),
    CylinderTheorem(CylinderParams),
    Cobordism(CylinderParams),
    GetzlerSweep(SweepParams),
    HalfcylChecks(HalfcylParams),
    GammaCheck(CylinderParams),
}

fn check_grid(n_theta: usize, gauge: &GaugeInput) -> Result<()> {
    let grid = CircleGrid::new(n_theta)?;
    gauge.spec().sample(grid)?;
    Ok(())
}

fn check_cylinder(p: &CylinderParams) -> Result<()> {
    check_grid(p.n_theta, &p.gauge)?;
    IntervalGrid::new(p.n_x, p.length)?;
    let n = p.gauge.fiber_dim();
    if p.f0.len() != n || p.fl.len() != n {
        return Err(Error::InvalidParameter(format!(
            "f0 and fl need {n} signs to match the gauge"
        )));
    }
    if p.f0.iter().chain(&p.fl).any(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::InvalidParameter("f0 and fl entries must be ±1".into()));
    }
    Ok(())
}

impl Scenario {
    pub fn new(name: impl Into<String>, kind: Kind, parameters: Value) -> Self {
        Self {
            name: name.into(),
            kind,
            parameters,
            expected: None,
        }
    }

    pub fn with_expected(mut self, value: f64, tolerance: f64) -> Self {
        self.expected = Some(Expected { value, tolerance });
        self
    }

    /// Parses the parameters and checks the target preconditions. Cheap.
    pub fn validate(&self) -> Result<Params> {
        let p = self.parameters.clone();
        let wrap = |e: Error| e.in_scenario(&self.name);
        let parsed = match self.kind {
            Kind::CircleSf => {
                let c: CircleParams = serde_json::from_value(p)?;
                check_grid(c.n_theta, &c.gauge)?;
                if c.orientation.abs() != 1.0 {
                    return Err(wrap(Error::InvalidParameter("orientation must be ±1".into())));
                }
                Params::CircleSf(c)
            }
            Kind::GetzlerSweep => {
                let c: SweepParams = serde_json::from_value(p)?;
                check_grid(c.n_theta, &c.gauge)?;
                if c.eps_grid.is_empty() || c.eps_grid.iter().any(|&e| !(e > 0.0)) {
                    return Err(wrap(Error::InvalidParameter("eps_grid must be positive".into())));
                }
                Params::GetzlerSweep(c)
            }
            Kind::HalfcylChecks => {
                let c: HalfcylParams = if p.is_null() {
                    HalfcylParams::default()
                } else {
                    serde_json::from_value(p)?
                };
                CutoffPair::new(c.a, c.b)?;
                if c.eps_values.iter().chain([&c.factor_eps]).any(|&e| !(e > 0.0)) {
                    return Err(wrap(Error::InvalidParameter("eps must be positive".into())));
                }
                CircleGrid::new(c.factor_n_theta)?;
                Params::HalfcylChecks(c)
            }
            Kind::CylinderTheorem | Kind::Cobordism | Kind::GammaCheck => {
                let c: CylinderParams = serde_json::from_value(p)?;
                check_cylinder(&c)?;
                match self.kind {
                    Kind::CylinderTheorem => Params::CylinderTheorem(c),
                    Kind::Cobordism => Params::Cobordism(c),
                    _ => Params::GammaCheck(c),
                }
            }
        };
        Ok(parsed)
    }
}

/// Sign conventions measured at winding 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    /// `SF(D^∂, e^{iθ})`.
    pub sigma1: i64,
    /// `cylinder_sf / boundary side` for `F0 = +1`, `FL = −1`, `g = e^{iθ}`.
    pub sigma2: i64,
    /// Orientation signs of the two boundary circles.
    pub eta0: i64,
    pub eta_l: i64,
    /// Sign applied to the diagonal of `k⁻ − k⁺` in the half-line factor.
    pub half_trace_sign: i64,
}

impl Conventions {
    pub fn calibrate(opts: &FlowOptions) -> Result<Self> {
        let grid = CircleGrid::new(17)?;
        let sigma1 = boundary_sf(&build_boundary_dirac(grid, 1), &GaugeMap::scalar_winding(grid, 1), opts)?.value;
        let provisional = Self {
            sigma1,
            sigma2: 1,
            eta0: 1,
            eta_l: -1,
            half_trace_sign: -1,
        };
        let p = CylinderParams {
            n_theta: 17,
            n_x: 16,
            length: 1.0,
            f0: vec![1.0],
            fl: vec![-1.0],
            gauge: GaugeInput::Windings { windings: vec![1] },
            check_doubling: false,
            u_grid: vec![],
        };
        let t = theorem_sides(&p, &provisional, opts)?;
        if t.rhs_twice == 0 || t.lhs * 2 % t.rhs_twice != 0 {
            return Err(Error::InvalidParameter(format!(
                "calibration cylinder gave lhs {} against rhs {}/2",
                t.lhs, t.rhs_twice
            )));
        }
        Ok(Self {
            sigma2: 2 * t.lhs / t.rhs_twice,
            ..provisional
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub kind: Kind,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs: Option<f64>,
    pub values: BTreeMap<String, Value>,
    pub checks: Vec<CheckRecord>,
    pub resolution: BTreeMap<String, Value>,
    pub conventions: Conventions,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crossings: Vec<Crossing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl RunRecord {
    fn new(s: &Scenario, conventions: Conventions) -> Self {
        Self {
            scenario: s.name.clone(),
            kind: s.kind,
            pass: false,
            lhs: None,
            rhs: None,
            values: BTreeMap::new(),
            checks: Vec::new(),
            resolution: BTreeMap::new(),
            conventions,
            sweep: Vec::new(),
            crossings: Vec::new(),
            error: None,
            wall_time_s: 0.0,
        }
    }

    fn set(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(key.to_string(), json!(v));
    }

    fn res(&mut self, key: &str, v: impl Serialize) {
        self.resolution.insert(key.to_string(), json!(v));
    }

    /// Exact integer check recorded as a residual with zero tolerance.
    fn exact(&mut self, name: &str, got: i64, want: i64) {
        self.checks.push(CheckRecord::new(name, (got - want).abs() as f64, 0.0));
    }

    fn at_most(&mut self, name: &str, residual: f64, tolerance: f64) {
        self.checks.push(CheckRecord::new(name, residual, tolerance));
    }

    /// Record with the wall time cleared, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    pub fn implied_sigma(&self, key: &str) -> Option<i64> {
        self.values.get(key).and_then(Value::as_i64)
    }
}

fn diag_signs(signs: &[f64]) -> CMatrix {
    let n = signs.len();
    let mut f = CMatrix::zeros(n, n);
    for (i, &s) in signs.iter().enumerate() {
        f[(i, i)] = c64(s, 0.0);
    }
    f
}

struct TheoremSides {
    lhs: i64,
    /// `2·RHS`, an integer by construction.
    rhs_twice: i64,
    plus_total: i64,
    minus_total: i64,
    components: Vec<Value>,
    flow: crate::cylinder::CylinderFlow,
    hermiticity: f64,
}

fn cylinder_setup(p: &CylinderParams, n_x: usize) -> Result<(CylinderBVP, CylinderGauge, GaugeMap)> {
    let circle = CircleGrid::new(p.n_theta)?;
    let interval = IntervalGrid::new(n_x, p.length)?;
    let n = p.gauge.fiber_dim();
    let f0 = BoundarySplitting::constant(circle, &diag_signs(&p.f0))?;
    let fl = BoundarySplitting::constant(circle, &diag_signs(&p.fl))?;
    let bvp = CylinderBVP::assemble(circle, interval, n, f0, fl, true)?;
    let g = p.gauge.spec().sample(circle)?;
    let cg = CylinderGauge::from_circle(interval, &g);
    Ok((bvp, cg, g))
}

fn theorem_sides(p: &CylinderParams, conv: &Conventions, opts: &FlowOptions) -> Result<TheoremSides> {
    let (bvp, cg, g) = cylinder_setup(p, p.n_x)?;
    let flow = cylinder_sf(&bvp, &cg, opts)?;
    let d = build_boundary_dirac(bvp.circle, bvp.fiber_dim);
    let mut plus_total = 0;
    let mut minus_total = 0;
    let mut components = Vec::new();
    for (label, eta, split) in [("x=0", conv.eta0, &bvp.f0), ("x=L", conv.eta_l, &bvp.fl)] {
        let (bp, bm) = split_by_f(&d, split, true)?;
        let sp = flow_with_shift(&bp.op, &restricted_commutator(&bp, split, &g)?, opts)?;
        let sm = flow_with_shift(&bm.op, &restricted_commutator(&bm, split, &g)?, opts)?;
        plus_total += eta * sp.value;
        minus_total += eta * sm.value;
        components.push(json!({
            "component": label,
            "eta": eta,
            "sf_plus": sp.value,
            "sf_minus": sm.value,
            "shift_plus": sp.shift,
            "shift_minus": sm.shift,
            "rank_plus": split.rank_plus,
            "rank_minus": split.rank_minus,
        }));
    }
    Ok(TheoremSides {
        lhs: flow.value,
        rhs_twice: plus_total - minus_total,
        plus_total,
        minus_total,
        components,
        hermiticity: bvp.hermiticity_residual(),
        flow,
    })
}

/// `SF` of the oriented sum `D₀^∂ ⊕ D_L^∂` under `g ⊕ g`.
fn boundary_total(p: &CylinderParams, conv: &Conventions, opts: &FlowOptions) -> Result<i64> {
    let grid = CircleGrid::new(p.n_theta)?;
    let g = p.gauge.spec().sample(grid)?;
    let n = g.fiber_dim;
    let d0 = build_oriented_dirac(grid, n, conv.eta0 as f64);
    let dl = build_oriented_dirac(grid, n, conv.eta_l as f64);
    let v0 = analytic_gauge_commutator(&d0, &g)?;
    let vl = analytic_gauge_commutator(&dl, &g)?;
    let op = SelfAdjointOp::direct_sum(&[&d0.op, &dl.op]);
    let v = SelfAdjointOp::direct_sum(&[&v0, &vl]);
    Ok(flow_with_shift(&op, &v, opts)?.value)
}

fn run_circle(rec: &mut RunRecord, p: &CircleParams, opts: &FlowOptions) -> Result<()> {
    let grid = CircleGrid::new(p.n_theta)?;
    let g = p.gauge.spec().sample(grid)?;
    let d = build_oriented_dirac(grid, g.fiber_dim, p.orientation);
    let sf = boundary_sf(&d, &g, opts)?;
    let w = crate::circle::winding_number(&g)?;
    let predicted = rec.conventions.sigma1 * p.orientation as i64 * w;
    rec.res("n_theta", p.n_theta);
    rec.res("fiber_dim", g.fiber_dim);
    rec.set("sf", sf.value);
    rec.set("winding", w);
    rec.set("shift", sf.shift);
    if w != 0 && sf.value.abs() == w.abs() {
        rec.set("implied_sigma1", sf.value / (p.orientation as i64 * w));
    }
    if let Some(f) = &sf.flow {
        rec.set("min_abs_eigenvalue", f.min_abs_eigenvalue);
        rec.set("refinement_depth", f.refinement_depth);
        rec.crossings = f.crossings.clone();
    }
    rec.exact("sf = sigma1 * orientation * winding", sf.value, predicted);
    rec.lhs = Some(sf.value as f64);
    rec.rhs = Some(predicted as f64);
    Ok(())
}

fn run_sweep(rec: &mut RunRecord, p: &SweepParams, opts: &FlowOptions) -> Result<()> {
    let grid = CircleGrid::new(p.n_theta)?;
    let g = p.gauge.spec().sample(grid)?;
    let d = build_boundary_dirac(grid, g.fiber_dim);
    let v = analytic_gauge_commutator(&d, &g)?;
    let sf = flow_with_shift(&d.op, &v, opts)?;
    let gopts = GetzlerOptions::default();
    let mut eps_grid = p.eps_grid.clone();
    eps_grid.sort_by(f64::total_cmp);
    let mut solver = GetzlerSolver::new(&d.op, &v)?;
    let plain = solver.sweep(&eps_grid, &gopts)?;
    rec.set("plateau_unshifted", plain.plateau);
    let est = match sf.shift {
        Some(c) => {
            let shifted = solver.shifted(c).sweep(&eps_grid, &gopts)?;
            rec.set("sweep_unshifted", &plain.sweep);
            shifted
        }
        None => plain,
    };
    rec.res("n_theta", p.n_theta);
    rec.res("quadrature_nodes", est.quadrature_nodes);
    rec.set("sf", sf.value);
    rec.set("shift", sf.shift);
    rec.set("plateau", est.plateau);
    rec.set("converged", est.converged);
    rec.sweep = est.sweep.clone().unwrap_or_default();
    rec.lhs = est.plateau.map(|pl| pl.value);
    rec.rhs = Some(sf.value as f64);
    match est.plateau {
        Some(pl) => rec.at_most("plateau value - sf", (pl.value - sf.value as f64).abs(), 0.05),
        None => rec.at_most("plateau exists", 1.0, 0.0),
    }
    Ok(())
}

fn run_theorem(rec: &mut RunRecord, p: &CylinderParams, opts: &FlowOptions) -> Result<()> {
    let t = theorem_sides(p, &rec.conventions, opts)?;
    rec.res("n_theta", p.n_theta);
    rec.res("n_x", p.n_x);
    rec.res("length", p.length);
    rec.set("cylinder_sf", t.lhs);
    rec.set("rhs", t.rhs_twice as f64 / 2.0);
    rec.set("sf_plus_total", t.plus_total);
    rec.set("sf_minus_total", t.minus_total);
    rec.set("components", &t.components);
    rec.set("shift", t.flow.shift);
    rec.set("min_abs_eigenvalue", t.flow.min_abs_eigenvalue);
    rec.set("hermiticity_residual", t.hermiticity);
    if t.rhs_twice != 0 && (2 * t.lhs) % t.rhs_twice == 0 {
        rec.set("implied_sigma2", 2 * t.lhs / t.rhs_twice);
    }
    rec.crossings = t.flow.crossings.clone();
    rec.lhs = Some(t.lhs as f64);
    rec.rhs = Some(t.rhs_twice as f64 / 2.0);
    let s2 = rec.conventions.sigma2;
    rec.exact("rhs is an integer", t.rhs_twice.rem_euclid(2), 0);
    rec.exact("cylinder_sf = sigma2 * rhs", 2 * t.lhs, s2 * t.rhs_twice);
    rec.exact("SF(B+) + SF(B-) = 0", t.plus_total + t.minus_total, 0);
    rec.exact("cylinder_sf = sigma2 * SF(B+ total)", t.lhs, s2 * t.plus_total);
    rec.exact("cylinder_sf = -sigma2 * SF(B- total)", t.lhs, -s2 * t.minus_total);
    rec.at_most("hermiticity residual", t.hermiticity, 1e-11);
    if p.check_doubling {
        let doubled = CylinderParams {
            n_x: 2 * p.n_x,
            ..p.clone()
        };
        let (bvp, cg, _) = cylinder_setup(&doubled, doubled.n_x)?;
        let v = cylinder_sf(&bvp, &cg, opts)?.value;
        rec.set("cylinder_sf_doubled", v);
        rec.exact("stable under doubling n_x", v, t.lhs);
    }
    Ok(())
}

fn is_definite(signs: &[f64]) -> bool {
    signs.iter().all(|&s| s == signs[0])
}

fn run_cobordism(rec: &mut RunRecord, p: &CylinderParams, opts: &FlowOptions) -> Result<()> {
    let total = boundary_total(p, &rec.conventions, opts)?;
    rec.res("n_theta", p.n_theta);
    rec.res("n_x", p.n_x);
    rec.set("boundary_total", total);
    rec.exact("SF(D^boundary, g) = 0", total, 0);
    rec.lhs = Some(total as f64);
    rec.rhs = Some(0.0);
    if p.f0 == p.fl && is_definite(&p.f0) {
        let (bvp, cg, _) = cylinder_setup(p, p.n_x)?;
        let flow = cylinder_sf(&bvp, &cg, opts)?;
        let gaps = path_spectral_gaps(&bvp, &cg, &p.u_grid)?;
        let floor = gaps
            .iter()
            .copied()
            .fold(flow.min_abs_eigenvalue, f64::min);
        rec.set("cylinder_sf", flow.value);
        rec.set("min_abs_eigenvalue", floor);
        rec.exact("cylinder_sf = 0", flow.value, 0);
        rec.checks.push(CheckRecord {
            check: "min |eig| along the path >= 0.05".into(),
            residual: floor,
            tolerance: 0.05,
            pass: floor >= 0.05,
        });
        rec.lhs = Some(flow.value as f64);
    }
    Ok(())
}

fn run_gamma(rec: &mut RunRecord, p: &CylinderParams) -> Result<()> {
    let (bvp, cg, _) = cylinder_setup(p, p.n_x)?;
    let report = gamma_deformation_check(&bvp, &cg, &p.u_grid)?;
    let herm = bvp.hermiticity_residual();
    let min_sv = report.min_singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    rec.res("n_theta", p.n_theta);
    rec.res("n_x", p.n_x);
    rec.set("gamma", &report);
    rec.at_most("hermiticity residual", herm, 1e-11);
    rec.checks.push(CheckRecord {
        check: "min singular value of D(u) + gamma > 0".into(),
        residual: min_sv,
        tolerance: 0.0,
        pass: min_sv > 0.0,
    });
    rec.at_most("interior anticommutator", report.interior_anticommutator, 1e-10);
    rec.at_most("gamma^2 = 1", report.gamma_square_defect, 1e-14);
    if p.f0 == p.fl && is_definite(&p.f0) {
        let gap = path_spectral_gaps(&bvp, &cg, &[0.0])?[0];
        rec.set("definite_gap", gap);
        rec.checks.push(CheckRecord {
            check: "definite F invertibility floor >= 0.05".into(),
            residual: gap,
            tolerance: 0.05,
            pass: gap >= 0.05,
        });
    }
    if p.f0.len() == 1 {
        let conv = mode_convergence(1, p.f0[0], p.fl[0], p.length, (-8.0, 8.0), &[16, 32, 64])?;
        rec.set("mode_convergence", &conv);
        rec.at_most("mode oracle slope - 2", (conv.slope - 2.0).abs(), 0.3);
    }
    Ok(())
}

fn run_halfcyl(rec: &mut RunRecord, p: &HalfcylParams) -> Result<()> {
    let cut = CutoffPair::new(p.a, p.b)?;
    let (prod, range) = cut.defects(4000);
    rec.at_most("lambda mu = mu", prod, 1e-14);
    rec.at_most("cutoff range", range, 0.0);
    let mut halves = Vec::new();
    for &eps in &p.eps_values {
        let v = half_trace_integral(eps, &cut)?;
        halves.push(json!({"eps": eps, "value": v}));
        rec.at_most(&format!("half trace at eps = {eps}"), (v - 0.5).abs(), 1e-10);
        let exact = 0.5;
        rec.at_most(
            &format!("deviation at eps = {eps} within exp(-a^2/(2 eps))"),
            (v - exact).abs(),
            (-p.a * p.a / (2.0 * eps)).exp(),
        );
    }
    rec.set("half_trace", halves);
    let eps = p.eps_values.first().copied().unwrap_or(0.01);
    let b = 6.0 * eps.sqrt();
    let sharp = half_trace_integral(eps, &CutoffPair::sharp(b)?)?;
    rec.at_most("sharp cutoff = erf/2", (sharp - 0.5 * libm::erf(b / eps.sqrt())).abs(), 1e-12);

    let ys = [0.05, 0.2, 0.5];
    for (sign, name) in [(ImageSign::Minus, "Dirichlet"), (ImageSign::Plus, "Neumann")] {
        let k = ImageHeatKernel::new(0.05, sign)?;
        rec.at_most(&format!("{name} image kernel at x = 0"), k.boundary_residual(&ys), 1e-6);
        let pts = [(0.0, 0.1), (0.2, 0.3), (0.5, 0.1), (0.15, 0.15)];
        rec.at_most(&format!("{name} semigroup"), semigroup_residual(0.02, 0.03, sign, &pts)?, 1e-8);
    }

    let diag = HalfCylModel::new(
        SelfAdjointOp::diagonal(&[0.3, -1.2]),
        diag_signs(&[1.0, -1.0]),
    )?;
    let random = HalfCylModel::random_commuting(6, p.seed)?;
    for (label, m) in [("diagonal", diag), ("random", random)] {
        for c in m.verify_u_identities() {
            rec.at_most(&format!("{label}: {}", c.check), c.residual, c.tolerance.min(1e-11));
        }
    }

    let mixed = verify_mixed_domain(&[0.0, 1.0, 2.0], 0.05, 200, None)?;
    for c in mixed.records {
        rec.checks.push(c);
    }

    let grid = CircleGrid::new(p.factor_n_theta)?;
    let gopts = GetzlerOptions::default();
    let s1 = rec.conventions.sigma1 as f64;
    let cases = [
        ("F = +1, g = e^{i theta}", vec![1.0], vec![1i64]),
        ("F = diag(1,-1), g = diag(e^{i theta}, 1)", vec![1.0, -1.0], vec![1, 0]),
    ];
    let mut factors = Vec::new();
    for (label, signs, ks) in cases {
        let d = build_boundary_dirac(grid, signs.len());
        let split = BoundarySplitting::from_signs(grid, &signs)?;
        let model = HalfCylModel::from_circle(&d, &split)?;
        let g = GaugeMap::diagonal_windings(grid, &ks);
        let t = factorized_boundary_term(&model, &g, p.factor_eps, &cut, &gopts)?;
        rec.at_most(&format!("{label}: boundary term = sigma1/2"), (t.value - 0.5 * s1).abs(), 0.01);
        rec.at_most(&format!("{label}: factorization consistency"), (t.value - t.split_value).abs(), 1e-6);
        factors.push(t);
    }
    rec.set("factorized", factors);
    rec.res("factor_n_theta", p.factor_n_theta);
    rec.res("cutoff_a", p.a);
    rec.res("cutoff_b", p.b);
    rec.res("seed", p.seed);
    Ok(())
}

/// Runs one scenario. Module errors become a failed record with the
/// scenario name attached.
pub fn run(s: &Scenario, conventions: Conventions, opts: &FlowOptions) -> RunRecord {
    let start = Instant::now();
    let mut rec = RunRecord::new(s, conventions);
    let outcome = s.validate().and_then(|p| match &p {
        Params::CircleSf(c) => run_circle(&mut rec, c, opts),
        Params::GetzlerSweep(c) => run_sweep(&mut rec, c, opts),
        Params::CylinderTheorem(c) => run_theorem(&mut rec, c, opts),
        Params::Cobordism(c) => run_cobordism(&mut rec, c, opts),
        Params::GammaCheck(c) => run_gamma(&mut rec, c),
        Params::HalfcylChecks(c) => run_halfcyl(&mut rec, c),
    });
    match outcome {
        Ok(()) => {
            if let (Some(e), Some(v)) = (&s.expected, rec.lhs) {
                rec.at_most("expected value", (v - e.value).abs(), e.tolerance);
            }
            rec.pass = !rec.checks.is_empty() && rec.checks.iter().all(|c| c.pass);
        }
        Err(e) => {
            rec.error = Some(e.in_scenario(&s.name).to_string());
            rec.pass = false;
        }
    }
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SuiteFile {
    Named {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        seed: Option<u64>,
        scenarios: Vec<Scenario>,
    },
    Bare(Vec<Scenario>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    pub seed: Option<u64>,
    pub scenarios: Vec<Scenario>,
}

impl Suite {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        // Pick the shape first so field errors are reported instead of
        // the generic untagged mismatch.
        let file = if v.is_array() {
            SuiteFile::Bare(serde_json::from_value(v)?)
        } else {
            #[derive(Deserialize)]
            struct Named {
                #[serde(default)]
                name: Option<String>,
                #[serde(default)]
                seed: Option<u64>,
                scenarios: Vec<Scenario>,
            }
            let n: Named = serde_json::from_value(v)?;
            SuiteFile::Named {
                name: n.name,
                seed: n.seed,
                scenarios: n.scenarios,
            }
        };
        Ok(match file {
            SuiteFile::Named {
                name,
                seed,
                scenarios,
            } => Self {
                name: name.unwrap_or_else(|| "suite".into()),
                seed,
                scenarios,
            },
            SuiteFile::Bare(scenarios) => Self {
                name: "suite".into(),
                seed: None,
                scenarios,
            },
        })
    }

    /// Validates every scenario before any heavy work.
    pub fn validate(&self) -> Result<()> {
        for s in &self.scenarios {
            s.validate().map_err(|e| e.in_scenario(&s.name))?;
        }
        Ok(())
    }

    /// Applies the suite seed to scenarios that take one but do not set it.
    fn seeded(&self) -> Vec<Scenario> {
        self.scenarios
            .iter()
            .map(|s| {
                let mut s = s.clone();
                if let (Some(seed), Kind::HalfcylChecks) = (self.seed, s.kind) {
                    if s.parameters.is_null() {
                        s.parameters = json!({});
                    }
                    if let Some(obj) = s.parameters.as_object_mut() {
                        obj.entry("seed").or_insert(json!(seed));
                    }
                }
                s
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub conventions: Conventions,
    /// Scenarios whose implied sign disagrees with the calibrated one.
    pub convention_flips: Vec<String>,
    pub pass: bool,
    pub records: Vec<RunRecord>,
}

/// Calibrates the signs once, then runs the scenarios on up to `workers`
/// threads. Records come back in file order.
pub fn run_suite(suite: &Suite, workers: usize, opts: &FlowOptions) -> Result<SuiteReport> {
    suite.validate()?;
    let conventions = Conventions::calibrate(opts)?;
    let scenarios = suite.seeded();
    let records = run_parallel(&scenarios, conventions, workers, opts);
    let mut flips = Vec::new();
    for r in &records {
        let bad1 = r.implied_sigma("implied_sigma1").is_some_and(|s| s != conventions.sigma1);
        let bad2 = r.implied_sigma("implied_sigma2").is_some_and(|s| s != conventions.sigma2);
        if bad1 || bad2 {
            flips.push(r.scenario.clone());
        }
    }
    let pass = flips.is_empty() && records.iter().all(|r| r.pass);
    Ok(SuiteReport {
        suite: suite.name.clone(),
        conventions,
        convention_flips: flips,
        pass,
        records,
    })
}

#[cfg(feature = "parallel")]
fn run_parallel(scenarios: &[Scenario], conv: Conventions, workers: usize, opts: &FlowOptions) -> Vec<RunRecord> {
    use rayon::prelude::*;
    let go = || scenarios.par_iter().map(|s| run(s, conv, opts)).collect();
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(go),
        Err(_) => go(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_parallel(scenarios: &[Scenario], conv: Conventions, _workers: usize, opts: &FlowOptions) -> Vec<RunRecord> {
    scenarios.iter().map(|s| run(s, conv, opts)).collect()
}

pub fn emit_json<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, records)?;
    writeln!(out)?;
    Ok(())
}

pub fn load_records(text: &str) -> Result<Vec<RunRecord>> {
    Ok(serde_json::from_str(text)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Suite summary: `scenario,lhs,rhs,pass`.
pub fn emit_summary_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "lhs", "rhs", "pass"])?;
    for r in records {
        w.write_record([r.scenario.clone(), fmt_opt(r.lhs), fmt_opt(r.rhs), r.pass.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep rows `eps,value`.
pub fn emit_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "value"])?;
    for p in points {
        w.write_record([p.eps.to_string(), p.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Crossing rows `t,branch,direction,slope`.
pub fn emit_crossings_csv<W: Write>(crossings: &[Crossing], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "branch", "direction", "slope"])?;
    for c in crossings {
        w.write_record([
            c.t.to_string(),
            c.branch.to_string(),
            c.direction.to_string(),
            c.slope.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv() -> Conventions {
        Conventions::calibrate(&FlowOptions::default()).unwrap()
    }

    #[test]
    fn calibration_signs() {
        let c = conv();
        assert_eq!((c.sigma1, c.sigma2, c.eta0, c.eta_l), (1, 1, 1, -1));
    }

    #[test]
    fn bad_parameters_are_rejected_before_running() {
        let s = Scenario::new("even", Kind::CircleSf, json!({"n_theta": 32, "gauge": {"windings": [1]}}));
        assert!(s.validate().is_err());
        let s = Scenario::new("typo", Kind::CircleSf, json!({"ntheta": 33, "gauge": {"windings": [1]}}));
        assert!(s.validate().is_err());
        let s = Scenario::new(
            "signs",
            Kind::CylinderTheorem,
            json!({"n_theta": 9, "n_x": 8, "f0": [1.0, 1.0], "fl": [-1.0], "gauge": {"windings": [1]}}),
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn circle_record() {
        let s = Scenario::new("c", Kind::CircleSf, json!({"n_theta": 17, "gauge": {"windings": [2]}}));
        let r = run(&s, conv(), &FlowOptions::default());
        assert!(r.pass, "{r:?}");
        assert_eq!(r.values["sf"], json!(2));
    }

    #[test]
    fn failed_scenario_keeps_name() {
        let s = Scenario::new("broken", Kind::CircleSf, json!({"n_theta": 4, "gauge": {"windings": [1]}}));
        let r = run(&s, conv(), &FlowOptions::default());
        assert!(!r.pass);
        assert!(r.error.unwrap().contains("broken"));
    }

    #[test]
    fn empty_documents() {
        let mut buf = Vec::new();
        emit_json(&[], &mut buf).unwrap();
        assert!(load_records(std::str::from_utf8(&buf).unwrap()).unwrap().is_empty());
        let mut buf = Vec::new();
        emit_summary_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "scenario,lhs,rhs,pass\n");
    }
}
