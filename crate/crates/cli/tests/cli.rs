use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn polyflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("report on stdout")
}

const Z1: &str = "(2*x2-1)*x1*(1-x1);0";
const Z2: &str = "0;x2*(x2-1)";

#[test]
fn classify_catalog_and_files() {
    let out = polyflow(&["classify", "cube3", "--expect", "simple"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["data"]["is_simple"], true);

    let out = polyflow(&["classify", "icosahedron"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["data"]["is_simple"], false);
    assert_eq!(polyflow(&["classify", "icosahedron", "--expect", "simple"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dodecahedron.json");
    std::fs::write(&path, polyflow_core::catalog::source("dodecahedron").unwrap()).unwrap();
    let out = polyflow(&["classify", path.to_str().unwrap()]);
    assert_eq!(report(&out)["data"]["facets"], 12);
}

#[test]
fn usage_and_parse_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"vertices\": [[0, 0], oops]}").unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "{\"vertices\": []}").unwrap();
    for args in [
        vec!["classify", bad.to_str().unwrap()],
        vec!["classify", empty.to_str().unwrap()],
        vec!["classify", "no-such-polytope"],
        vec!["flow", "square", "--field", "x3;0", "--start", "0.5,0.5"],
        vec!["flow", "square", "--field", "x1", "--start", "0.5,0.5"],
        vec!["frobnicate"],
        vec!["chart", "square"],
    ] {
        assert_eq!(polyflow(&args).status.code(), Some(2), "{args:?}");
    }
    let out = polyflow(&["classify", bad.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = polyflow(&["audit-control", "square", "--field", Z1, "--field", Z2, "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let read = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(read(&a), read(&b));

    let other = polyflow(&["audit-control", "square", "--field", Z1, "--field", Z2, "--seed", "7"]);
    let first: Value = serde_json::from_slice(&read(&a)).unwrap();
    assert_ne!(report(&other)["inputs_digest"], first["inputs_digest"]);
    assert!(first.get("wall_time_seconds").is_none());
    let timed = polyflow(&["classify", "square", "--timing"]);
    assert!(report(&timed)["wall_time_seconds"].is_number());
}

#[test]
fn flow_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = polyflow(&[
        "flow", "square", "--field", Z2, "--start", "0.3,0.5", "--time", "1.0986122886681098", "--tol", "1e-10", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let y = report(&out)["data"]["final_point"][1].as_f64().unwrap();
    assert!((y - 0.25).abs() < 1e-8);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,violation\n"));
    assert!(csv.lines().count() > 2);
}

#[test]
fn non_stratified_flow_fails_the_check() {
    let out = polyflow(&["flow", "square", "--field", "1;0", "--start", "0.5,0.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reach_and_control_audit() {
    let out = polyflow(&["reach", "square", "--field", Z1, "--field", Z2, "--start", "0.3,0.4", "--target", "0.7,0.6"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(report(&out)["checks"][0]["worst"].as_f64().unwrap() <= 1e-3);

    let out = polyflow(&["audit-control", "square", "--field", Z2]);
    assert_eq!(out.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["data"]["condition_i"], false);
    assert_eq!(r["data"]["condition_ii"], false);
}

#[test]
fn extension_commands() {
    let out = polyflow(&["extend", "square", "--data", "x1^2 - x2", "--ell", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let out = polyflow(&["extend", "square_pyramid", "--data", "x1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = polyflow(&["extend-field", "square", "--field", "x1*(1-x1);x2*(1-x2)"]);
    assert_eq!(out.status.code(), Some(0));
    let out = polyflow(&["stratify-check", "square", "--field", "1;0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = polyflow(&["obstruction", "icosahedron"]);
    assert_eq!(out.status.code(), Some(0));
    let out = polyflow(&["obstruction", "cube3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extend_from_family_file() {
    let dir = tempfile::tempdir().unwrap();
    // Square edges in lattice order carry the restrictions of x1 + x2.
    let lattice = polyflow(&["classify", "square", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(lattice.status.code(), Some(0));
    let dump: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lattice.json")).unwrap()).unwrap();
    let edges: Vec<String> = dump["faces"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|f| f["dim"] == 1)
        .map(|f| format!("\"{}\": \"x1 + x2\"", f["id"]))
        .collect();
    let family = dir.path().join("family.json");
    std::fs::write(&family, format!("{{{}}}", edges.join(", "))).unwrap();
    let out = polyflow(&["extend", "square", "--family", family.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("samples.csv").exists());
}

#[test]
fn suite_single_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = polyflow(&["suite", "--criterion", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("criterion 1 [PASS]"));
    assert!(std::fs::read_to_string(dir.path().join("checks.csv")).unwrap().contains("icosahedron"));
    assert_eq!(polyflow(&["suite", "--criterion", "9"]).status.code(), Some(2));
}
