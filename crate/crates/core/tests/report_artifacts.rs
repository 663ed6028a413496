//! Artifact-shape checks: file manifest, JSON round trip, CSV row counts,
//! SVG structure and CV-table degeneracies.

use std::path::Path;

use powerbench_core::report::{
    cv_table, emit_manifest, emit_report, load_report, render_svg, series_csv, ReportBundle,
};
use powerbench_core::scenario::ScenarioConfig;
use powerbench_core::valframe::{run_test, TestKind, TestReport, REPORT_VERSION};

fn scenario() -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json");
    ScenarioConfig::load(&path).expect("default scenario loads")
}

fn t1_report() -> TestReport {
    run_test(&scenario(), TestKind::T1, false).unwrap().report
}

#[test]
fn emit_report_writes_the_three_artifacts_and_round_trips() {
    let report = t1_report();
    let dir = std::env::temp_dir().join("powerbench_report_artifacts");
    let _ = std::fs::remove_dir_all(&dir);
    let files = emit_report(&report, &dir).unwrap();
    assert_eq!(files.len(), 3);
    for f in &files {
        assert!(f.exists(), "{} missing", f.display());
    }
    let parsed = load_report(&files[0]).unwrap();
    assert_eq!(parsed, report, "JSON round trip changed the report");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn csv_rows_count_the_cleaned_samples() {
    let report = t1_report();
    let csv = series_csv(&report);
    let expected: usize = report
        .steps
        .iter()
        .map(|s| s.cleaned_pkg_series.len() + s.cleaned_dram_series.len())
        .sum();
    let data_rows = csv.lines().count() - 1; // header
    assert_eq!(data_rows, expected);
    assert!(csv.starts_with("step,label,domain,sample_index,watts\n"));
}

#[test]
fn svg_shows_the_sweep_and_both_estimators() {
    let report = t1_report();
    let svg = render_svg(&report);
    assert!(svg.contains(r#"viewBox="0 0 800 500""#));
    // PKG panel has the oracle and the ratio model overlaid.
    assert!(svg.contains(r#"data-series="oracle_pkg""#));
    assert!(svg.contains(r#"data-series="kepler_ratio_pkg""#));
    assert!(svg.contains(r#"data-series="resource_centric_dram""#));
    // The x axis spans the frequency sweep.
    assert!(svg.contains(">1<"), "f_min tick missing");
    assert!(svg.contains(">2.6<"), "f_max tick missing");
    assert_eq!(svg.matches("<polyline").count(), 6);
}

#[test]
fn single_step_cv_rows_have_min_equal_max_equal_avg() {
    let mut report = t1_report();
    report.steps.truncate(1);
    let (csv, text) = cv_table(std::slice::from_ref(&report)).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    // Per block of three: min == max == avg.
    for block in cells[1..].chunks(3) {
        assert_eq!(block[0], block[1]);
        assert_eq!(block[1], block[2]);
    }
    assert!(text.contains("t1"));
}

#[test]
fn manifest_round_trips() {
    let bundle = ReportBundle {
        report_version: REPORT_VERSION,
        scenario_name: "default".into(),
        scenario_hash: "deadbeef".into(),
        seed: 42,
        files: vec!["t1.json".into(), "t1.svg".into()],
    };
    let dir = std::env::temp_dir().join("powerbench_manifest_check");
    let _ = std::fs::remove_dir_all(&dir);
    let path = emit_manifest(&bundle, &dir).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let parsed: ReportBundle = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, bundle);
    let _ = std::fs::remove_dir_all(&dir);
}
