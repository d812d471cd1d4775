//! End-to-end runs of the `kolmo` binary.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kolmo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kolmo")).args(args).current_dir(dir).output().expect("kolmo runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_reports_langevin_structure() {
    let dir = tempfile::tempdir().unwrap();
    let out = kolmo(&["analyze", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("structure"));
    let d = &read_json(&dir.path().join("o/structure.json"))["details"];
    assert_eq!(d["blocks"]["Q"], 4);
    assert_eq!(d["blocks"]["kappa"], 1);
    assert_eq!(d["exponents"]["alpha"].as_f64().unwrap(), 15.0 / 11.0);
    assert_eq!(d["exponents"]["beta"].as_f64().unwrap(), 1.25);
    let report = read_json(&dir.path().join("o/report.json"));
    assert_eq!(report["all_pass"], true);
}

#[test]
fn kernel_grid_matches_the_heat_kernel() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("heat.cfg"),
        "[operator]\npreset = heat\nn = 1\n[domain]\nlo = -1, 0\nhi = 1, 2\nresolutions = 17\n[experiment]\nrun = kernel\n",
    )
    .unwrap();
    let out = kolmo(&["kernel", "--config", "heat.cfg", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/kernel_grid.csv")).unwrap();
    let mut checked = 0;
    for line in csv.lines().filter(|l| !l.starts_with('#')) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let (x, t, g) = (v[0], v[1], v[2]);
        let exact = (-x * x / (4.0 * t)).exp() / (4.0 * PI * t).sqrt();
        assert!((g - exact).abs() <= 1e-12 * exact.max(1e-300), "x={x} t={t}: {g} vs {exact}");
        if x == 0.0 {
            checked += 1;
        }
    }
    assert_eq!(checked, 17);
}

#[test]
fn moser_skips_coarse_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    let out = kolmo(&["moser", "--resolution", "48", "--resolution", "64", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["moser", "moser_oneside"] {
        let d = &read_json(&dir.path().join(format!("o/{name}.json")))["details"];
        assert_eq!(d["skipped_resolutions"], serde_json::json!([48]), "{name}");
        let blocks = d["moser_reports"].as_array().unwrap();
        assert_eq!(blocks.len(), 1, "{name}");
        assert_eq!(blocks[0]["resolution"], 64);
        for run in blocks[0]["runs"].as_array().unwrap() {
            assert!(run["sweep"]["max_exponent"].as_f64().unwrap().is_finite());
        }
    }
}

#[test]
fn moser_fails_cleanly_when_every_resolution_is_too_coarse() {
    let dir = tempfile::tempdir().unwrap();
    let out = kolmo(&["moser", "--resolution", "16", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty domain"));
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "[operator]\npreset = langevin\nq = banana\n").unwrap();
    let out = kolmo(&["analyze", "--config", "bad.cfg", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg"));

    let out = Command::new(env!("CARGO_BIN_EXE_kolmo"))
        .args(["analyze", "--out", "o"])
        .env("KOLMO_THREADS", "0")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
