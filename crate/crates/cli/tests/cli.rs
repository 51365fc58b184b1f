use std::path::Path;
use std::process::{Command, Output};

fn pg_lio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pg-lio")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn simulate(dir: &Path, scenario: &str, seed: &str, duration: &str) {
    let o = pg_lio(&[
        "simulate",
        "--scenario",
        scenario,
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
        "--duration",
        duration,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&pg_lio(&[])), 2);
    assert_eq!(code(&pg_lio(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&pg_lio(&["simulate", "--scenario", "moon-base", "--out", out])), 2);
    assert_eq!(code(&pg_lio(&["simulate", "--scenario", "room-slow", "--seed", "x", "--out", out])), 2);
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(code(&pg_lio(&["--help"])), 0);
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), "tunnel-plain", "7", "0.35");
    simulate(b.path(), "tunnel-plain", "7", "0.35");
    for f in ["imu.csv", "groundtruth.tum", "config.txt", "scans/000000.pgls", "scans/000002.pgls"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    assert!(!a.path().join("scans/000003.pgls").exists());
}

#[test]
fn run_and_evaluate_round_trip() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    simulate(data.path(), "room-slow", "3", "1.5");
    let d = data.path();
    let o = pg_lio(&[
        "run",
        "--scans",
        d.join("scans").to_str().unwrap(),
        "--imu",
        d.join("imu.csv").to_str().unwrap(),
        "--config",
        d.join("config.txt").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--save-map",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let traj = std::fs::read_to_string(out.path().join("trajectory.tum")).unwrap();
    let diag = std::fs::read_to_string(out.path().join("diagnostics.jsonl")).unwrap();
    assert_eq!(traj.lines().count(), diag.lines().count());
    assert!(traj.lines().count() >= 9);
    for line in diag.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["stamp"].is_f64() && v["ms"]["optimize"].is_number() && v["degenerate_directions"].is_u64());
    }
    assert!(out.path().join("map.xyz").metadata().unwrap().len() > 0);

    let est = out.path().join("trajectory.tum");
    let gt = d.join("groundtruth.tum");
    let o = pg_lio(&["evaluate", "--est", est.to_str().unwrap(), "--ref", gt.to_str().unwrap(), "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(m["ate_rmse_m"].as_f64().unwrap() < 0.05);

    let o = pg_lio(&["evaluate", "--est", gt.to_str().unwrap(), "--ref", gt.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("ATE RMSE     0.0000 m"));
}

#[test]
fn missing_inputs_exit_with_two() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    simulate(data.path(), "room-slow", "1", "0.25");
    let d = data.path();
    let o = pg_lio(&[
        "run",
        "--scans",
        d.join("scans").to_str().unwrap(),
        "--imu",
        d.join("nope.csv").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let o = pg_lio(&["evaluate", "--est", "/nonexistent.tum", "--ref", d.join("groundtruth.tum").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_failures_exit_with_one() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    simulate(data.path(), "room-slow", "1", "0.25");
    let d = data.path();
    // IMU stream too short for static initialization
    let o = pg_lio(&[
        "run",
        "--scans",
        d.join("scans").to_str().unwrap(),
        "--imu",
        d.join("imu.csv").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    // stamps far from every reference pose
    let shifted = out.path().join("shifted.tum");
    let gt = std::fs::read_to_string(d.join("groundtruth.tum")).unwrap();
    let moved: String = gt
        .lines()
        .map(|l| {
            let mut parts: Vec<String> = l.split_whitespace().map(String::from).collect();
            parts[0] = format!("{}", parts[0].parse::<f64>().unwrap() + 0.05);
            parts.join(" ") + "\n"
        })
        .collect();
    std::fs::write(&shifted, moved).unwrap();
    let o =
        pg_lio(&["evaluate", "--est", shifted.to_str().unwrap(), "--ref", d.join("groundtruth.tum").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
