use std::path::PathBuf;
use std::process::{Command, Output};

fn sflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sflab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace_file(rel: &str) -> String {
    let mut p = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    p.pop();
    p.pop();
    p.push(rel);
    p.to_string_lossy().into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    dir.join(name)
}

#[test]
fn circle_crossings_csv() {
    let out = sflab(&["circle-sf", "--format", "csv", "--params", r#"{"gauge": {"windings": [2]}}"#]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,branch,direction,slope"));
    let dirs: i64 = lines
        .map(|l| l.split(',').nth(2).unwrap().parse::<i64>().unwrap())
        .sum();
    assert_eq!(dirs, 2);
}

#[test]
fn sweep_csv_has_grid() {
    let out = sflab(&["getzler-sweep", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let eps: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(eps, vec![1.0, 4.0, 9.0, 16.0, 25.0]);
}

#[test]
fn wrong_expectation_exits_one() {
    let out = sflab(&["circle-sf", "--expect", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_config_exits_two() {
    let path = scratch("bad.json");
    std::fs::write(&path, r#"[{"name": "x", "kind": "circle_sf", "parameters": {"n_theta": 9, "gauge": {"windings": [1]}, "extra": 1}}]"#).unwrap();
    let out = sflab(&["suite", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));

    assert_eq!(sflab(&["suite", "/does/not/exist.json"]).status.code(), Some(2));
    assert_eq!(sflab(&["circle-sf", "--params", "[1]"]).status.code(), Some(2));
}

#[test]
fn desk_suite_passes_and_writes_json() {
    let out_path = scratch("desk.json");
    let out = sflab(&[
        "suite",
        &workspace_file("suites/desk.json"),
        "--workers",
        "2",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    let names: Vec<&str> = report["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["scenario"].as_str().unwrap())
        .collect();
    assert_eq!(names.first(), Some(&"circle k=1"));
    assert_eq!(names.last(), Some(&"half cylinder"));
    assert_eq!(names.len(), 9);
}

#[test]
fn seed_reaches_halfcyl_model() {
    let a = sflab(&["halfcyl-checks", "--seed", "3"]);
    let b = sflab(&["halfcyl-checks", "--seed", "3"]);
    assert_eq!(a.status.code(), Some(0));
    let strip = |o: &Output| {
        let mut v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["records"][0]["wall_time_s"] = 0.into();
        v
    };
    let (ra, rb) = (strip(&a), strip(&b));
    assert_eq!(ra, rb);
    assert_eq!(ra["records"][0]["resolution"]["seed"], 3);
}
