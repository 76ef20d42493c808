use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofdm-anl1")).args(args).output().expect("spawn binary")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ofdm-anl1-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

const SCENE: &str = r#"{
  "config": {"M": 8, "N": 8, "delta_f_hz": 5000.0, "T_s": 2e-4, "T_cp_s": 1e-4, "f_c_hz": 2e9, "noise_power_db": -40.0},
  "constellation": "QPSK",
  "ber": 0.0,
  "targets": [{"alpha_re": 1.0, "alpha_im": 0.0, "phi": 0.2, "psi": 0.3}]
}"#;

#[test]
fn simulate_solve_spectrum_pipeline() {
    let dir = scratch("pipeline");
    let scene = dir.join("scene.json");
    let meas = dir.join("meas.json");
    let est = dir.join("est.json");
    let grid = dir.join("grid.csv");
    fs::write(&scene, SCENE).unwrap();
    let s = |p: &PathBuf| p.to_str().unwrap().to_owned();

    let out = bin(&["simulate", "--scene", &s(&scene), "--seed", "3", "--out", &s(&meas), "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin(&["solve", "--input", &s(&meas), "--out", &s(&est), "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&est).unwrap()).unwrap();
    let paths = doc["paths"].as_array().unwrap();
    assert!(!paths.is_empty());
    let (phi, psi) = (paths[0]["phi"].as_f64().unwrap(), paths[0]["psi"].as_f64().unwrap());
    assert!((phi - 0.2).abs() < 1e-2 && (psi - 0.3).abs() < 1e-2, "peak at ({phi}, {psi})");

    let out = bin(&["spectrum", "--input", &s(&est), "--oversample", "4", "--out", &s(&grid), "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&grid).unwrap();
    assert_eq!(text.lines().count(), 1 + 32);
    fs::remove_dir_all(dir).ok();
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(bin(&["solve", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(bin(&["solve", "--input", "/nonexistent/meas.json"]).status.code(), Some(2));
    assert_eq!(bin(&["scenario", "--preset", "nope"]).status.code(), Some(2));
}

#[test]
fn scenario_preset_round_trips_through_bench() {
    let dir = scratch("bench");
    let spec = dir.join("spec.json");
    let out = bin(&["scenario", "--preset", "scenario1", "--out", spec.to_str().unwrap()]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&spec).unwrap()).unwrap();
    assert_eq!(value["config"]["N"], 64);

    let out = bin(&["bench", "--preset", "scenario1", "--ber", "0", "--trials", "1", "--algo", "an", "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("ber,algorithm"));
    assert!(lines[1].starts_with("0,CS-AN,"));
    fs::remove_dir_all(dir).ok();
}
