use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn spincm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spincm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

fn read_json(p: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn simulate_to(dir: &TempDir, name: &str, extra: &[&str]) -> String {
    let out = path(dir, name);
    let mut args = vec!["simulate", "--seed", "3", "--np", "3", "--nspin", "2", "--out", &out];
    args.extend_from_slice(extra);
    let res = spincm(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn simulate_then_verify_passes() {
    let dir = TempDir::new().unwrap();
    let traj = simulate_to(&dir, "t.json", &["--steps", "6"]);
    let report = path(&dir, "r.json");
    let res = spincm(&["verify", &traj, "--out", &report]);
    assert_eq!(code(&res), 0);
    let entries = read_json(&report)["entries"].as_object().unwrap().clone();
    assert!(entries.contains_key("lax_equation") && entries.contains_key("three_level_forward"));
    assert!(entries.values().all(|e| e["pass"] == Value::Bool(true)));
}

#[test]
fn coincident_positions_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let inst = path(&dir, "i.json");
    std::fs::write(
        &inst,
        r#"{"Np": 2, "N": 1, "mu": [3, 1], "particles": [
            {"x": [0.5, 0], "xdot": [0, 0], "a": [[1, 0]], "b": [[1, 0]]},
            {"x": [0.5, 0], "xdot": [0, 0], "a": [[1, 0]], "b": [[1, 0]]}]}"#,
    )
    .unwrap();
    assert_eq!(code(&spincm(&["simulate", "--instance", &inst, "--steps", "3"])), 1);
}

#[test]
fn missing_source_is_an_input_error() {
    assert_eq!(code(&spincm(&["simulate", "--np", "2"])), 1);
    assert_eq!(code(&spincm(&["verify", "/nonexistent/trajectory.json"])), 1);
}

#[test]
fn corrupted_trajectory_fails_with_named_checks() {
    let dir = TempDir::new().unwrap();
    let traj = simulate_to(&dir, "t.json", &["--steps", "5"]);
    let mut doc = read_json(&traj);
    let x = &mut doc["levels"][2]["particles"][0]["x"][0];
    *x = Value::from(x.as_f64().unwrap() + 1e-2);
    std::fs::write(&traj, doc.to_string()).unwrap();
    let report = path(&dir, "r.json");
    let res = spincm(&["verify", &traj, "--out", &report]);
    assert_eq!(code(&res), 3);
    let rep = read_json(&report);
    for name in ["lax_equation", "discrete_eom", "trace_invariants"] {
        assert_eq!(rep["entries"][name]["pass"], Value::Bool(false), "{name}");
    }
    assert!(String::from_utf8_lossy(&res.stderr).contains("lax_equation"));
}

#[test]
fn two_levels_skip_three_level_checks() {
    let dir = TempDir::new().unwrap();
    let traj = simulate_to(&dir, "t.json", &["--steps", "1"]);
    let report = path(&dir, "r.json");
    assert_eq!(code(&spincm(&["verify", &traj, "--out", &report])), 0);
    let rep = read_json(&report);
    for name in [
        "discrete_eom",
        "velocity_two_sided",
        "three_level_backward",
        "three_level_forward",
    ] {
        assert!(rep["skipped"][name].is_string(), "{name}");
        assert!(rep["entries"].get(name).is_none());
    }
}

#[test]
fn truncated_run_is_partial() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "t.json");
    let res = spincm(&[
        "simulate",
        "--seed",
        "3",
        "--np",
        "3",
        "--nspin",
        "2",
        "--steps",
        "20",
        "--max-iters",
        "1",
        "--predictor",
        "shift",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 2);
    let traj = spincm::io::parse_trajectory(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(traj.len() < 21);
}

#[test]
fn single_particle_csv_rows() {
    let dir = TempDir::new().unwrap();
    let inst = path(&dir, "i.json");
    std::fs::write(
        &inst,
        r#"{"Np": 1, "N": 2, "mu": [3, 1], "particles": [
            {"x": [0, 0], "xdot": [0.2, 0], "a": [[1, 0], [0, 0]], "b": [[1, 0], [0.5, 0]]}]}"#,
    )
    .unwrap();
    let csv_path = path(&dir, "t.csv");
    let res = spincm(&[
        "simulate",
        "--instance",
        &inst,
        "--steps",
        "10",
        "--format",
        "csv",
        "--out",
        &csv_path,
    ]);
    assert_eq!(code(&res), 0);
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 6 + 8);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 11);
    for (k, row) in rows.iter().enumerate() {
        let re_x: f64 = row[2].parse().unwrap();
        let im_x: f64 = row[3].parse().unwrap();
        // x advances by 1/(mu + xdot/2) = 1/(3.1 + i)
        let (re, im) = (3.1 / 10.61, -1.0 / 10.61);
        assert!(
            (re_x - k as f64 * re).abs() < 1e-12 && (im_x - k as f64 * im).abs() < 1e-12,
            "row {k}"
        );
    }
}

#[test]
fn output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let one = simulate_to(&dir, "a.json", &["--steps", "8"]);
    let two = simulate_to(&dir, "b.json", &["--steps", "8"]);
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&two).unwrap());
    let r1 = path(&dir, "ra.json");
    let r2 = path(&dir, "rb.json");
    spincm(&["verify", &one, "--out", &r1]);
    spincm(&["verify", &two, "--out", &r2]);
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
}

#[test]
fn trajectory_file_roundtrips() {
    let dir = TempDir::new().unwrap();
    let out = simulate_to(&dir, "t.json", &["--steps", "4"]);
    let text = std::fs::read_to_string(&out).unwrap();
    let traj = spincm::io::parse_trajectory(&text).unwrap();
    assert_eq!(traj.len(), 5);
    assert_eq!(spincm::io::trajectory_to_json(&traj), text.trim_end());
}

#[test]
fn converge_builtin_pair_passes() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "c.json");
    let res = spincm(&["converge", "--eps", "0.01,0.005", "--horizon", "0.1", "--out", &out]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read_json(&out)["pass"], Value::Bool(true));
}

#[test]
fn spinless_requires_scalar_spins() {
    assert_eq!(
        code(&spincm(&["spinless", "--seed", "1", "--np", "2", "--nspin", "2"])),
        1
    );
    let res = spincm(&["spinless", "--seed", "1", "--np", "3", "--nspin", "1", "--steps", "10"]);
    assert_eq!(code(&res), 0);
}

#[test]
fn no_partial_file_left_behind() {
    let dir = TempDir::new().unwrap();
    simulate_to(&dir, "t.json", &["--steps", "2"]);
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names, vec!["t.json".to_owned()]);
    assert!(!Path::new(&path(&dir, "t.json.partial")).exists());
}
