use serde_json::json;
use spectral_flow::experiments::{
    emit_crossings_csv, emit_json, emit_sweep_csv, load_records, run, run_suite, Conventions,
    Kind, Scenario, Suite,
};
use spectral_flow::FlowOptions;

fn conv() -> Conventions {
    Conventions::calibrate(&FlowOptions::default()).unwrap()
}

fn cylinder(f0: f64, fl: f64, k: i64) -> serde_json::Value {
    json!({"n_theta": 33, "n_x": 32, "f0": [f0], "fl": [fl], "gauge": {"windings": [k]}})
}

#[test]
fn theorem_scenario_with_doubling() {
    let mut p = cylinder(1.0, -1.0, 2);
    p["check_doubling"] = json!(true);
    let r = run(&Scenario::new("thm", Kind::CylinderTheorem, p), conv(), &FlowOptions::default());
    assert!(r.pass, "{:#?}", r.checks);
    assert_eq!(r.lhs, Some(2.0));
    println!("theorem: {:.2}s", r.wall_time_s);
}

#[test]
fn reversed_conditions_flip_the_sign() {
    let r = run(
        &Scenario::new("rev", Kind::CylinderTheorem, cylinder(-1.0, 1.0, 1)),
        conv(),
        &FlowOptions::default(),
    );
    assert!(r.pass, "{:#?}", r.checks);
    assert_eq!(r.lhs, Some(-1.0));
}

#[test]
fn cobordism_scenario() {
    let r = run(
        &Scenario::new("cob", Kind::Cobordism, cylinder(1.0, 1.0, 2)),
        conv(),
        &FlowOptions::default(),
    );
    assert!(r.pass, "{:#?}", r.checks);
    println!("cobordism: {:.2}s", r.wall_time_s);
}

#[test]
fn gamma_scenario() {
    let r = run(
        &Scenario::new("gamma", Kind::GammaCheck, cylinder(1.0, 1.0, 1)),
        conv(),
        &FlowOptions::default(),
    );
    assert!(r.pass, "{:#?}", r.checks);
    println!("gamma: {:.2}s", r.wall_time_s);
}

#[test]
fn halfcyl_scenario() {
    let r = run(&Scenario::new("half", Kind::HalfcylChecks, json!({"seed": 7})), conv(), &FlowOptions::default());
    assert!(r.pass, "{:#?}", r.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>());
    println!("halfcyl: {:.2}s", r.wall_time_s);
}

#[test]
fn getzler_scenario_matches_crossing_count() {
    let s = Scenario::new("gz", Kind::GetzlerSweep, json!({"n_theta": 65, "gauge": {"windings": [1]}}));
    let r = run(&s, conv(), &FlowOptions::default());
    assert!(r.pass, "{:#?}", r.checks);
    let mut buf = Vec::new();
    emit_sweep_csv(&r.sweep, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), r.sweep.len());
    for (row, p) in rows.iter().zip(&r.sweep) {
        let mut it = row.split(',');
        assert_eq!(it.next().unwrap().parse::<f64>().unwrap(), p.eps);
        assert_eq!(it.next().unwrap().parse::<f64>().unwrap(), p.value);
    }
}

#[test]
fn records_round_trip_and_are_deterministic() {
    let s = Scenario::new("c", Kind::CircleSf, json!({"n_theta": 33, "gauge": {"windings": [-2]}}));
    let a = run(&s, conv(), &FlowOptions::default());
    let b = run(&s, conv(), &FlowOptions::default());
    assert_eq!(a.without_timing(), b.without_timing());
    let mut buf = Vec::new();
    emit_json(std::slice::from_ref(&a), &mut buf).unwrap();
    let back = load_records(std::str::from_utf8(&buf).unwrap()).unwrap();
    assert_eq!(back, vec![a.clone()]);
    let mut csv = Vec::new();
    emit_crossings_csv(&a.crossings, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), a.crossings.len() + 1);
}

#[test]
fn suite_runs_in_file_order() {
    let text = include_str!("../../../suites/desk.json");
    let suite = Suite::from_json(text).unwrap();
    let report = run_suite(&suite, 2, &FlowOptions::default()).unwrap();
    let names: Vec<_> = report.records.iter().map(|r| r.scenario.clone()).collect();
    let want: Vec<_> = suite.scenarios.iter().map(|s| s.name.clone()).collect();
    assert_eq!(names, want);
    assert!(report.pass, "{:#?}", report.records.iter().filter(|r| !r.pass).collect::<Vec<_>>());
    assert!(report.convention_flips.is_empty());
}
