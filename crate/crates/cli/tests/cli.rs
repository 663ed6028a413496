//! End-to-end checks of the `powerbench` binary: exit codes, manifest
//! shape, determinism of emitted bytes, calibration feasibility paths and
//! report re-rendering.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_powerbench"))
}

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json")
}

fn targets_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/targets_default.json")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("powerbench_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "powerbench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn identical_invocations_produce_identical_files() {
    let scenario = scenario_path();
    let a = tmp_dir("det_a");
    let b = tmp_dir("det_b");
    for dir in [&a, &b] {
        run_ok(&[
            "run",
            scenario.to_str().unwrap(),
            "--tests",
            "t1",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    let files_a = read_dir_bytes(&a);
    let files_b = read_dir_bytes(&b);
    assert_eq!(files_a.len(), files_b.len());
    assert!(files_a.len() >= 6); // t1.{json,svg}, t1_series.csv, cv_table.{csv,txt}, manifest
    for (name, bytes) in &files_a {
        assert_eq!(Some(bytes), files_b.get(name), "{name} differs between runs");
    }
    let _ = std::fs::remove_dir_all(a);
    let _ = std::fs::remove_dir_all(b);
}

#[test]
fn run_all_collects_five_reports_in_the_manifest() {
    let out_dir = tmp_dir("all");
    run_ok(&[
        "run",
        scenario_path().to_str().unwrap(),
        "--tests",
        "all",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    let files: Vec<String> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let reports: Vec<&String> = files
        .iter()
        .filter(|f| f.ends_with(".json") && !f.starts_with("manifest"))
        .collect();
    assert_eq!(reports.len(), 5, "expected 5 reports, got {reports:?}");
    for name in ["t1.json", "t2_pkg.json", "t2_dram.json", "t3.json", "inactive.json"] {
        assert!(files.iter().any(|f| f == name), "{name} missing from manifest");
        assert!(out_dir.join(name).exists());
    }
    let _ = std::fs::remove_dir_all(out_dir);
}

#[test]
fn missing_scenario_exits_with_configuration_code() {
    let out = bin().args(["run", "/nonexistent/scenario.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_test_name_exits_with_configuration_code() {
    let out = bin()
        .args(["run", scenario_path().to_str().unwrap(), "--tests", "t9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_solves_the_default_targets() {
    let out_file = tmp_dir("cal").join("calibrated.json");
    std::fs::create_dir_all(out_file.parent().unwrap()).unwrap();
    let out = run_ok(&[
        "calibrate",
        targets_path().to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("calibration feasible"));
    assert!(stdout.contains("t1_peak_ratio"));
    let scenario: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_file).unwrap()).unwrap();
    assert!(!scenario["calibration"]["achieved"].as_object().unwrap().is_empty());
    let _ = std::fs::remove_dir_all(out_file.parent().unwrap());
}

#[test]
fn forced_exact_idle_makes_calibration_infeasible() {
    let dir = tmp_dir("infeasible");
    std::fs::create_dir_all(&dir).unwrap();
    let mut targets: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(targets_path()).unwrap()).unwrap();
    targets["force_beta_pkg"] = serde_json::json!(1.0);
    let targets_file = dir.join("targets.json");
    std::fs::write(&targets_file, serde_json::to_string(&targets).unwrap()).unwrap();
    let out = bin()
        .args([
            "calibrate",
            targets_file.to_str().unwrap(),
            "--out",
            dir.join("s.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("t1 peak overestimation"), "stderr: {stderr}");
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn report_command_rerenders_identical_artifacts() {
    let out_dir = tmp_dir("rerender");
    run_ok(&[
        "run",
        scenario_path().to_str().unwrap(),
        "--tests",
        "t3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let before = read_dir_bytes(&out_dir);
    std::fs::remove_file(out_dir.join("t3.svg")).unwrap();
    std::fs::remove_file(out_dir.join("t3_series.csv")).unwrap();
    run_ok(&["report", out_dir.to_str().unwrap()]);
    let after = read_dir_bytes(&out_dir);
    for name in ["t3.svg", "t3_series.csv", "cv_table.csv", "cv_table.txt", "t3.json"] {
        assert_eq!(before[name], after[name], "{name} changed after re-render");
    }
    let _ = std::fs::remove_dir_all(out_dir);
}

#[test]
fn dump_raw_writes_telemetry_csvs() {
    let out_dir = tmp_dir("raw");
    run_ok(&[
        "run",
        scenario_path().to_str().unwrap(),
        "--tests",
        "t3",
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-raw",
    ]);
    let power = std::fs::read_to_string(out_dir.join("t3_raw_power.csv")).unwrap();
    assert!(power.starts_with("t,socket,pkg_w,dram_w\n"));
    let usage = std::fs::read_to_string(out_dir.join("t3_raw_usage.csv")).unwrap();
    assert!(usage.starts_with("t,container,cpu_fraction,cycles,bandwidth_gbs\n"));
    assert!(usage.lines().any(|l| l.contains("stressor")));
    let _ = std::fs::remove_dir_all(out_dir);
}

#[test]
fn list_scenarios_shows_the_shipped_default() {
    let dir = scenario_path().parent().unwrap().to_path_buf();
    let out = run_ok(&["list-scenarios", dir.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("default.json"), "stdout: {stdout}");
}
