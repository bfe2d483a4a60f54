//! Binary-level tests: exit codes, overrides, file outputs, and the
//! resolved-config round trip.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cdf-sim"))
}

fn preset_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(name)
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cdf_sim_test_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_preset_exits_zero_and_writes_csv() {
    let dir = temp_dir("sim");
    let status = bin()
        .args(["simulate"])
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--out", dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = dir.join("single_integrator_b3.csv");
    assert!(csv.exists());
    let text = fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("step,t,x1,x2,u1,u2,rho,min_clearance,zeta,qp_residual\n"));
    assert!(dir.join("single_integrator_b3_resolved.scenario").exists());
    assert!(dir.join("single_integrator_b3_meta.toml").exists());
}

#[test]
fn malformed_scenario_exits_four_without_outputs() {
    let dir = temp_dir("bad");
    let bad = dir.join("broken.scenario");
    fs::write(&bad, "[system\nname = oops").unwrap();
    let out_dir = dir.join("out");
    let status = bin()
        .args(["simulate"])
        .arg(&bad)
        .args(["--out", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_key_exits_four() {
    let dir = temp_dir("unknown");
    let text = fs::read_to_string(preset_path("single_integrator_b3.scenario")).unwrap();
    let bad = dir.join("extra.scenario");
    fs::write(&bad, text + "\n[extra_section]\nx = 1\n").unwrap();
    let status = bin().args(["simulate"]).arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn early_stop_override_exits_three() {
    let dir = temp_dir("early");
    let status = bin()
        .args(["simulate"])
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--override", "sim.max_steps=1"])
        .args(["--out", dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn density_grid_rejects_resolution_one() {
    let dir = temp_dir("grid");
    let status = bin()
        .args(["density-grid"])
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--bounds", "-6,6,-6,6", "--resolution", "1,5"])
        .args(["--out", dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn density_grid_writes_samples() {
    let dir = temp_dir("grid_ok");
    let status = bin()
        .args(["density-grid"])
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--bounds", "-6,6,-6,6", "--resolution", "21,21"])
        .args(["--out", dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(dir.join("single_integrator_b3_grid.csv")).unwrap();
    assert!(text.starts_with("x1,x2,rho\n"));
    assert_eq!(text.lines().count(), 1 + 21 * 21);
}

#[test]
fn scenario_bound_values_and_domain() {
    let out = bin()
        .args([
            "scenario-bound",
            "--epsilon",
            "0.1",
            "--sigma",
            "0.01",
            "--inputs",
            "2",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "216");
    let out = bin()
        .args([
            "scenario-bound",
            "--epsilon",
            "0.5",
            "--sigma",
            "0.5",
            "--inputs",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "11");
    let out = bin()
        .args([
            "scenario-bound",
            "--epsilon",
            "1.5",
            "--sigma",
            "0.5",
            "--inputs",
            "1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn compare_sensing_sweep_orders_clearances() {
    let dir = temp_dir("cmp");
    let out = bin()
        .arg("compare")
        .arg(preset_path("single_integrator_b2.scenario"))
        .arg(preset_path("single_integrator_b3.scenario"))
        .arg(preset_path("single_integrator_b4.scenario"))
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    let clearances: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(clearances.len(), 3);
    assert!(clearances[0] < clearances[1] && clearances[1] < clearances[2]);
}

#[test]
fn compare_identical_scenarios_identical_rows() {
    let dir = temp_dir("cmp_same");
    let out = bin()
        .arg("compare")
        .arg(preset_path("single_integrator_b3.scenario"))
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    // Same scenario, same deterministic run: identical quantities.
    let strip = |r: &str| r.splitn(2, ',').nth(1).unwrap().to_string();
    assert_eq!(strip(rows[0]), strip(rows[1]));
}

#[test]
fn compare_rejects_mismatched_environments() {
    let out = bin()
        .arg("compare")
        .arg(preset_path("single_integrator_b3.scenario"))
        .arg(preset_path("double_gyre.scenario"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn resolved_config_round_trip_reproduces_run() {
    let dir = temp_dir("roundtrip");
    let status = bin()
        .args(["simulate"])
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--out", dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let resolved = dir.join("single_integrator_b3_resolved.scenario");
    let status = bin()
        .args(["simulate"])
        .arg(&resolved)
        .args(["--out", dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let a = fs::read(dir.join("single_integrator_b3.csv")).unwrap();
    let b = fs::read(dir.join("single_integrator_b3_resolved.csv")).unwrap();
    assert_eq!(
        a, b,
        "round-tripped scenario produced a different trajectory"
    );
}

#[test]
fn out_dir_environment_variable_is_honored() {
    let dir = temp_dir("envvar");
    let status = bin()
        .args(["simulate"])
        .arg(preset_path("single_integrator_b2.scenario"))
        .env("CDF_SIM_OUT_DIR", dir.to_str().unwrap())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.join("single_integrator_b2.csv").exists());
}

#[test]
fn dump_qp_writes_problem_csv() {
    let dir = temp_dir("qpdump");
    let status = bin()
        .args(["simulate"])
        .arg(preset_path("single_integrator_b3.scenario"))
        .args(["--out", dir.to_str().unwrap(), "--dump-qp"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(dir.join("single_integrator_b3_qp0.csv")).unwrap();
    // Two cost-matrix rows, the linear cost, one constraint.
    assert_eq!(text.lines().count(), 4);
    assert!(text
        .lines()
        .all(|l| l.starts_with("H,") || l.starts_with("J,") || l.starts_with("C,")));
}
