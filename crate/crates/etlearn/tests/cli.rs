//! End-to-end tests of the `etlearn` binary: exit codes, file outputs, and
//! byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_etlearn")
}

fn shipped_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/dc_servo.json")
}

/// A cut-down scenario so most tests stay fast.
fn small_scenario_json(total_steps: usize, changes: &str) -> String {
    format!(
        r#"{{
        "total_steps": {total_steps},
        "ts": 0.1,
        "seed": 5,
        "policy": "etl",
        "servo": {{
            "k_theta": 1280.2, "rho": 20.0, "j_l": 10.0, "j_m": 0.5,
            "beta_l": 25.0, "beta_m": 0.1, "k_t": 10.0, "r_a": 20.0
        }},
        "change_schedule": {changes},
        "noise": {{
            "sigma_w_diag": [9.9e-5, 9.9e-5, 9.39e-5, 5.6e-6],
            "sigma_z_per_state_row": [1e-9, 1e-9, 1e-9, 1e-9],
            "sigma_z_load_direction": 1e-5
        }},
        "filter": {{ "p0_per_state_row": [1e-7, 1e-7, 1e-7, 1e-7], "p0_load_direction": 1e-2 }},
        "trigger": {{ "alpha": 0.01 }},
        "mpc": {{
            "q_diag": [0.1, 0.05, 0.1, 0.05],
            "r_diag": [0.5],
            "q_terminal_diag": [0.1, 0.05, 0.1, 0.05],
            "horizon": 6,
            "nu": 1e8,
            "input_bound": 220.0,
            "torque_bound": 78.5398,
            "max_iters": 40
        }},
        "experiment": {{ "length": 20 }},
        "eval_step": 30
    }}"#
    )
}

#[test]
fn run_on_shipped_scenario_writes_full_log() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(bin())
        .args([
            "run",
            shipped_scenario().to_str().unwrap(),
            "--policy",
            "etl",
            "--seed",
            "1",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let rows = csv.lines().count();
    assert_eq!(rows, 3001, "header plus exactly 3000 data rows");
    assert!(dir.path().join("metrics.json").exists());
    assert!(dir.path().join("events.json").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn invalid_change_schedule_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.json");
    std::fs::write(
        &scenario,
        small_scenario_json(50, r#"[{"step": 50, "load_ratio": 22.0}]"#),
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["run", scenario.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("change_schedule"),
        "diagnostic must name the field, got: {stderr}"
    );
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("broken.json");
    std::fs::write(&scenario, "{ not json").unwrap();
    let out = Command::new(bin())
        .args(["run", scenario.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_4() {
    let out = Command::new(bin()).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));

    let out = Command::new(bin())
        .args(["run", "x.json", "--policy", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));

    let out = Command::new(bin()).args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_scenario_file_exits_3() {
    let out = Command::new(bin())
        .args(["run", "/nonexistent/path/sc.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sc.json");
    std::fs::write(
        &scenario,
        small_scenario_json(120, r#"[{"step": 40, "load_ratio": 22.0}]"#),
    )
    .unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let status = Command::new(bin())
            .args([
                "run",
                scenario.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(std::fs::read(out_dir.join("log.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "log.csv must be byte-identical");
}

#[test]
fn compare_emits_full_table() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sc.json");
    std::fs::write(&scenario, small_scenario_json(60, "[]")).unwrap();
    let status = Command::new(bin())
        .args([
            "compare",
            scenario.to_str().unwrap(),
            "--seeds",
            "3",
            "--jobs",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table1.json")).unwrap())
            .unwrap();
    for policy in ["etl", "permanent", "never"] {
        for metric in ["whole_run", "excluding_excitation"] {
            assert!(
                table[policy][metric]["mean"].is_number(),
                "missing {policy}/{metric}"
            );
        }
    }
    assert!(table["etl_lt_never_excl"]["p_value"].is_number());
}

#[test]
fn montecarlo_writes_fpr_and_respects_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sc.json");
    std::fs::write(&scenario, small_scenario_json(60, "[]")).unwrap();
    let status = Command::new(bin())
        .args([
            "montecarlo",
            scenario.to_str().unwrap(),
            "--runs",
            "20",
            "--alpha",
            "0.5",
            "--jobs",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let fpr: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fpr.json")).unwrap())
            .unwrap();
    assert_eq!(fpr["runs"], 20);
    assert!(fpr["rate"].as_f64().unwrap() <= 1.0);

    // A schedule with changes violates the precondition: exit 2.
    let sc2 = dir.path().join("sc2.json");
    std::fs::write(
        &sc2,
        small_scenario_json(60, r#"[{"step": 30, "load_ratio": 22.0}]"#),
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["montecarlo", sc2.to_str().unwrap(), "--runs", "5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn json_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sc.json");
    std::fs::write(&scenario, small_scenario_json(50, "[]")).unwrap();
    let status = Command::new(bin())
        .args([
            "run",
            scenario.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in ["metrics.json", "events.json", "manifest.json"] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let re = serde_json::to_string(&value).unwrap();
        let back: serde_json::Value = serde_json::from_str(&re).unwrap();
        assert_eq!(value, back, "{file} does not round-trip");
    }
}
