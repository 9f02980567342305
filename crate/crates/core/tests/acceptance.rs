//! Acceptance criteria 1 to 8, one line each.

mod common;

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use spectral_flow::circle::{
    analytic_gauge_commutator, boundary_sf, build_boundary_dirac, flow_with_shift,
    winding_number, CircleGrid, GaugeMap,
};
use spectral_flow::cylinder::{
    gamma_deformation_check, mode_convergence, path_spectral_gaps, CylinderBVP, CylinderGauge,
};
use spectral_flow::experiments::{run, Conventions, Kind, RunRecord, Scenario};
use spectral_flow::flow::{spectral_flow, FlowOptions, OperatorPath};
use spectral_flow::getzler::{GetzlerOptions, GetzlerSolver};
use spectral_flow::halfcyl::{
    half_trace_integral, semigroup_residual, CutoffPair, HalfCylModel, ImageSign,
};
use spectral_flow::linalg::{CMatrix, SelfAdjointOp, UnitaryOp};

use common::{random_hermitian, tracked_crossings};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// One circle scenario of criterion 1: fiber 1 uses `e^{ikθ}`, fiber 2
/// uses `diag(e^{ikθ}, 1)`.
fn circle_cases() -> Vec<(usize, usize, i64)> {
    let mut v = Vec::new();
    for n_theta in [33, 65] {
        for fiber in [1, 2] {
            for k in -3..=3 {
                v.push((n_theta, fiber, k));
            }
        }
    }
    v
}

fn circle_gauge(grid: CircleGrid, fiber: usize, k: i64) -> GaugeMap {
    if fiber == 1 {
        GaugeMap::scalar_winding(grid, k)
    } else {
        GaugeMap::diagonal_windings(grid, &[k, 0])
    }
}

fn criterion_1(sigma1: i64) -> Outcome {
    let opts = FlowOptions::default();
    let start = Instant::now();
    let mut bad = Vec::new();
    for (n_theta, fiber, k) in circle_cases() {
        let grid = CircleGrid::new(n_theta).unwrap();
        let g = circle_gauge(grid, fiber, k);
        let w = winding_number(&g).unwrap();
        let sf = boundary_sf(&build_boundary_dirac(grid, fiber), &g, &opts).unwrap().value;
        if sf != sigma1 * w || w != k {
            bad.push(format!("n={n_theta} fiber={fiber} k={k}: sf={sf} winding={w}"));
        }
    }
    let t = start.elapsed();
    outcome(
        bad.is_empty() && t < Duration::from_secs(10),
        format!("28 cases, sigma1 = {sigma1}, {:.2}s, failures {bad:?}", t.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let opts = FlowOptions::default();
    let gopts = GetzlerOptions::default();
    let grid_eps = [1.0, 4.0, 9.0, 16.0, 25.0];
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (n_theta, fiber, k) in circle_cases() {
        let grid = CircleGrid::new(n_theta).unwrap();
        let g = circle_gauge(grid, fiber, k);
        let d = build_boundary_dirac(grid, fiber);
        let v = analytic_gauge_commutator(&d, &g).unwrap();
        let sf = flow_with_shift(&d.op, &v, &opts).unwrap();
        let mut solver = GetzlerSolver::new(&d.op, &v).unwrap();
        if let Some(c) = sf.shift {
            solver = solver.shifted(c);
        }
        let est = solver.sweep(&grid_eps, &gopts).unwrap();
        match est.plateau {
            Some(p) => {
                let dev = (p.value - sf.value as f64).abs();
                worst = worst.max(dev);
                if dev >= 0.05 {
                    bad.push(format!("n={n_theta} fiber={fiber} k={k}: plateau {} vs {}", p.value, sf.value));
                }
            }
            None => bad.push(format!("n={n_theta} fiber={fiber} k={k}: no plateau")),
        }
    }
    let t = start.elapsed();
    outcome(
        bad.is_empty() && t < Duration::from_secs(60),
        format!("max |plateau - sf| = {worst:.2e}, {:.2}s, failures {bad:?}", t.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let c = CutoffPair::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.01, 0.02, 0.04] {
        let v = half_trace_integral(eps, &c).unwrap();
        let dev = (v - 0.5).abs();
        let bound = (-c.a * c.a / (2.0 * eps)).exp();
        pass &= dev <= 1e-10 && dev <= bound;
        parts.push(format!("eps={eps}: |v-1/2|={dev:.1e} (bound {bound:.1e})"));
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(1);
    outcome(pass, format!("a = {}, {}, {:.3}s", c.a, parts.join("; "), t.as_secs_f64()))
}

fn cylinder_scenario(kind: Kind, f0: f64, fl: f64, gauge: serde_json::Value, doubling: bool) -> Scenario {
    Scenario::new(
        format!("{kind:?} f0={f0} fl={fl} g={gauge}"),
        kind,
        json!({
            "n_theta": 33, "n_x": 32, "f0": vec![f0; gauge["windings"].as_array().unwrap().len()],
            "fl": vec![fl; gauge["windings"].as_array().unwrap().len()],
            "gauge": gauge, "check_doubling": doubling
        }),
    )
}

fn theorem_records(conv: Conventions) -> Vec<(Scenario, RunRecord)> {
    let opts = FlowOptions::default();
    let mut out = Vec::new();
    for (f0, fl) in [(1.0, -1.0), (-1.0, 1.0)] {
        for k in [-2i64, -1, 1, 2] {
            let s = cylinder_scenario(Kind::CylinderTheorem, f0, fl, json!({"windings": [k]}), true);
            let r = run(&s, conv, &opts);
            out.push((s, r));
        }
    }
    out
}

fn cobordism_gauges() -> Vec<serde_json::Value> {
    vec![
        json!({"windings": [1]}),
        json!({"windings": [2]}),
        json!({"windings": [1, -1]}),
    ]
}

fn criterion_4(records: &[(Scenario, RunRecord)]) -> Outcome {
    let mut bad = Vec::new();
    let mut slowest = 0.0f64;
    for (s, r) in records {
        let k = s.parameters["gauge"]["windings"][0].as_i64().unwrap();
        let lhs = r.lhs.unwrap_or(f64::NAN);
        let ok = r.pass && lhs.abs() == k.abs() as f64 && r.wall_time_s < 120.0;
        slowest = slowest.max(r.wall_time_s);
        if !ok {
            bad.push(format!("{}: lhs {:?} rhs {:?} error {:?}", s.name, r.lhs, r.rhs, r.error));
        }
        if r.values.get("cylinder_sf_doubled") != r.values.get("cylinder_sf") {
            bad.push(format!("{}: not stable under doubling", s.name));
        }
    }
    let signs: Vec<String> = records
        .iter()
        .map(|(s, r)| {
            format!(
                "({},{},k={})->{}",
                s.parameters["f0"][0], s.parameters["fl"][0], s.parameters["gauge"]["windings"][0],
                r.lhs.unwrap_or(f64::NAN)
            )
        })
        .collect();
    outcome(
        bad.is_empty(),
        format!("{} cases, slowest {slowest:.1}s, {}, failures {bad:?}", records.len(), signs.join(" ")),
    )
}

fn criterion_5(conv: Conventions) -> Outcome {
    let opts = FlowOptions::default();
    let mut bad = Vec::new();
    let mut floor = f64::INFINITY;
    for g in cobordism_gauges() {
        let s = cylinder_scenario(Kind::Cobordism, 1.0, 1.0, g, false);
        let r = run(&s, conv, &opts);
        floor = floor.min(r.values.get("min_abs_eigenvalue").and_then(|v| v.as_f64()).unwrap_or(0.0));
        let total = r.values.get("boundary_total").and_then(|v| v.as_i64());
        let cyl = r.values.get("cylinder_sf").and_then(|v| v.as_i64());
        if !r.pass || total != Some(0) || cyl != Some(0) {
            bad.push(format!("{}: total {total:?} cylinder {cyl:?} error {:?}", s.name, r.error));
        }
    }
    outcome(bad.is_empty(), format!("3 gauges, min |eig| along paths {floor:.3}, failures {bad:?}"))
}

fn criterion_6(conv: Conventions, theorem: &[(Scenario, RunRecord)]) -> Outcome {
    let opts = FlowOptions::default();
    let mut records: Vec<(Scenario, RunRecord)> = theorem.to_vec();
    for g in cobordism_gauges() {
        let s = cylinder_scenario(Kind::CylinderTheorem, 1.0, 1.0, g, false);
        let r = run(&s, conv, &opts);
        records.push((s, r));
    }
    let mut bad = Vec::new();
    for (s, r) in &records {
        let plus = r.values.get("sf_plus_total").and_then(|v| v.as_i64());
        let minus = r.values.get("sf_minus_total").and_then(|v| v.as_i64());
        let lhs = r.values.get("cylinder_sf").and_then(|v| v.as_i64());
        let (Some(p), Some(m), Some(l)) = (plus, minus, lhs) else {
            bad.push(format!("{}: missing values, error {:?}", s.name, r.error));
            continue;
        };
        let s2 = conv.sigma2;
        if p + m != 0 || l != s2 * p || l != -s2 * m {
            bad.push(format!("{}: lhs {l} plus {p} minus {m}", s.name));
        }
    }
    outcome(bad.is_empty(), format!("{} cylinder scenarios, failures {bad:?}", records.len()))
}

fn criterion_7(seed: u64) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;

    let mut herm = 0.0f64;
    for (n, s0, sl) in [(1, 1.0, -1.0), (2, 1.0, 1.0), (1, -1.0, 1.0)] {
        herm = herm.max(CylinderBVP::with_signs(33, 32, 1.0, n, s0, sl).unwrap().hermiticity_residual());
    }
    pass &= herm <= 1e-11;
    parts.push(format!("hermiticity {herm:.1e}"));

    let bvp = CylinderBVP::with_signs(33, 32, 1.0, 1, 1.0, 1.0).unwrap();
    let id = CylinderGauge::from_circle(bvp.interval, &GaugeMap::identity(bvp.circle, 1));
    let gap = path_spectral_gaps(&bvp, &id, &[0.0]).unwrap()[0];
    pass &= gap >= 0.05;
    parts.push(format!("definite gap {gap:.3}"));

    let u_grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mut min_sv = f64::INFINITY;
    for (s0, sl, k) in [(1.0, 1.0, 1), (-1.0, -1.0, 1), (1.0, 1.0, 2)] {
        let bvp = CylinderBVP::with_signs(33, 32, 1.0, 1, s0, sl).unwrap();
        let g = CylinderGauge::from_circle(bvp.interval, &GaugeMap::scalar_winding(bvp.circle, k));
        let r = gamma_deformation_check(&bvp, &g, &u_grid).unwrap();
        min_sv = min_sv.min(r.min_singular_values.iter().copied().fold(f64::INFINITY, f64::min));
    }
    pass &= min_sv > 0.0;
    parts.push(format!("gamma min singular value {min_sv:.3e}"));

    let f = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::from(1.0),
        Complex64::from(-1.0),
    ]));
    let models = [
        HalfCylModel::new(SelfAdjointOp::diagonal(&[0.4]), CMatrix::identity(1, 1)).unwrap(),
        HalfCylModel::new(SelfAdjointOp::diagonal(&[0.3, -1.1]), f).unwrap(),
        HalfCylModel::random_commuting(6, seed).unwrap(),
        HalfCylModel::random_commuting(8, seed + 1).unwrap(),
    ];
    let u_res = models
        .iter()
        .flat_map(|m| m.verify_u_identities())
        .map(|c| c.residual)
        .fold(0.0, f64::max);
    pass &= u_res <= 1e-11;
    parts.push(format!("U identities {u_res:.1e}"));

    let pts = [(0.0, 0.1), (0.2, 0.3), (0.5, 0.1), (0.15, 0.15), (0.7, 0.4)];
    let semi = [ImageSign::Plus, ImageSign::Minus]
        .iter()
        .map(|&s| semigroup_residual(0.02, 0.03, s, &pts).unwrap())
        .fold(0.0, f64::max);
    pass &= semi <= 1e-8;
    parts.push(format!("semigroup {semi:.1e}"));

    let mut slopes = Vec::new();
    for (s0, sl) in [(1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let r = mode_convergence(1, s0, sl, 1.0, (-8.0, 8.0), &[16, 32, 64]).unwrap();
        pass &= (r.slope - 2.0).abs() <= 0.3;
        slopes.push(format!("{:.2}", r.slope));
    }
    parts.push(format!("mode oracle slopes {}", slopes.join("/")));
    outcome(pass, parts.join(", "))
}

fn diag_path(c: f64) -> OperatorPath {
    OperatorPath::new(1, Some(1.0), move |t| Ok(SelfAdjointOp::diagonal(&[t - c])))
}

fn criterion_8() -> Outcome {
    let opts = FlowOptions::default();
    let mut parts = Vec::new();
    let mut pass = true;

    let triple: Vec<i64> = [0.5, 0.0, 1.0]
        .iter()
        .map(|&c| spectral_flow(&diag_path(c), &opts).unwrap().value)
        .collect();
    pass &= triple == vec![1, 0, 1];
    parts.push(format!("endpoint triple {triple:?}"));

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tracked = 0;
    let mut algebra_ok = true;
    for case in 0..10u64 {
        let id = CMatrix::identity(8, 8) * Complex64::from(2.0);
        let a = random_hermitian(8, &mut rng, 1.0) - &id;
        let b = random_hermitian(8, &mut rng, 1.0) + &id - &a;
        let (ac, bc) = (a.clone(), b.clone());
        let path = OperatorPath::new(8, None, move |t| SelfAdjointOp::new(&ac + &bc * Complex64::from(t)));
        let r = spectral_flow(&path, &opts).unwrap();
        let (value, count) = tracked_crossings(&a, &b, 4000);
        if value == r.value && count == r.crossings.len() {
            tracked += 1;
        }
        let s = 0.1 + 0.08 * case as f64;
        let left = spectral_flow(&path.sub_path(0.0, s), &opts).unwrap().value;
        let right = spectral_flow(&path.sub_path(s, 1.0), &opts).unwrap().value;
        let w = UnitaryOp::with_tolerance(random_hermitian(8, &mut rng, 1.0).qr().q(), 1e-10).unwrap();
        let conj = spectral_flow(&path.conjugated(&w).unwrap(), &opts).unwrap().value;
        let constant = spectral_flow(&OperatorPath::constant(path.sample(s).unwrap()), &opts).unwrap().value;
        algebra_ok &= left + right == r.value && conj == r.value && constant == 0;
    }
    pass &= tracked == 10 && algebra_ok;
    parts.push(format!("additivity/conjugation/constant {}", if algebra_ok { "exact" } else { "broken" }));
    parts.push(format!("branch tracking agrees on {tracked}/10 paths"));
    outcome(pass, parts.join(", "))
}

fn main() {
    let opts = FlowOptions::default();
    let conv = Conventions::calibrate(&opts).expect("calibration");
    let theorem = theorem_records(conv);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("circle SF equals sigma1 times winding", Box::new(|| criterion_1(conv.sigma1))),
        ("Getzler plateau matches the crossing count", Box::new(criterion_2)),
        ("half-line trace factor is 1/2", Box::new(criterion_3)),
        ("cylinder flow equals the boundary formula", Box::new(|| criterion_4(&theorem))),
        ("cobordism invariance", Box::new(|| criterion_5(conv))),
        ("paired boundary flows and the B+ form", Box::new(|| criterion_6(conv, &theorem))),
        ("structural suites", Box::new(|| criterion_7(11))),
        ("sfcore properties and branch tracking", Box::new(criterion_8)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {tag}  {name}  [{}]", i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "conventions: sigma1 = {}, sigma2 = {}, eta0 = {}, etaL = {}",
        conv.sigma1, conv.sigma2, conv.eta0, conv.eta_l
    );
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
