//! Report serialization: JSON (exact round-trip), CSV series, SVG charts
//! and the CV summary table.
//!
//! Identical reports must produce identical bytes: struct field order is
//! fixed, maps are BTreeMaps, and every float WE format (CSV/SVG/text)
//! goes through `fmt_sig` at six significant digits. JSON numbers use
//! serde_json's shortest exact representation so `parse(emit(x)) == x`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::valframe::TestReport;

/// Fixed-precision float formatting: six significant digits, no trailing
/// zeros, scientific notation only for extreme magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        return format!("{x:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let trimmed = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        &s
    };
    if trimmed == "-0" {
        "0".to_string()
    } else {
        trimmed.to_string()
    }
}

/// Manifest of one output directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportBundle {
    pub report_version: u32,
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub files: Vec<String>,
}

/// Write `<test>.json`, `<test>_series.csv` and `<test>.svg`.
pub fn emit_report(report: &TestReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let base = report.test_id.replace('-', "_");

    let json_path = out_dir.join(format!("{base}.json"));
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;

    let csv_path = out_dir.join(format!("{base}_series.csv"));
    std::fs::write(&csv_path, series_csv(report))?;

    let svg_path = out_dir.join(format!("{base}.svg"));
    std::fs::write(&svg_path, render_svg(report))?;

    Ok(vec![json_path, csv_path, svg_path])
}

/// Load a report back; used by `powerbench report` to re-render.
pub fn load_report(path: &Path) -> Result<TestReport> {
    let text = std::fs::read_to_string(path)?;
    let report: TestReport = serde_json::from_str(&text)
        .map_err(|e| Error::Configuration(format!("{}: not a test report: {e}", path.display())))?;
    Ok(report)
}

/// Long-format per-step cleaned series: one row per retained sample.
pub fn series_csv(report: &TestReport) -> String {
    let mut out = String::from("step,label,domain,sample_index,watts\n");
    for (i, step) in report.steps.iter().enumerate() {
        for (domain, series) in
            [("pkg", &step.cleaned_pkg_series), ("dram", &step.cleaned_dram_series)]
        {
            for (j, w) in series.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", i, step.label, domain, j, fmt_sig(*w));
            }
        }
    }
    out
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 500.0;

struct Panel {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Panel {
    fn sx(&self, t: f64) -> f64 {
        self.x0 + t * self.w
    }
    fn sy(&self, t: f64) -> f64 {
        // SVG y grows downward.
        self.y0 + (1.0 - t) * self.h
    }
}

fn polyline(panel: &Panel, xs: &[f64], ys: &[f64], x_rng: (f64, f64), y_rng: (f64, f64)) -> String {
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let tx = (x - x_rng.0) / span(x_rng.0, x_rng.1);
            let ty = (y - y_rng.0) / span(y_rng.0, y_rng.1);
            format!("{},{}", fmt_sig(panel.sx(tx)), fmt_sig(panel.sy(ty)))
        })
        .collect();
    points.join(" ")
}

/// Two-panel line chart (PKG, DRAM): oracle truth against both estimators
/// over the step variable. No plotting dependency; fixed 800x500 viewBox.
pub fn render_svg(report: &TestReport) -> String {
    let xs: Vec<f64> = report.steps.iter().map(|s| s.step_value).collect();
    let x_rng = (
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_W} {SVG_H}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="400" y="20" text-anchor="middle" font-size="14">{}: oracle vs. estimators</text>"#,
        report.test_id
    );

    for (idx, domain) in ["pkg", "dram"].iter().enumerate() {
        let panel = Panel {
            x0: 60.0 + idx as f64 * 390.0,
            y0: 50.0,
            w: 300.0,
            h: 380.0,
        };
        let (oracle, kepler, rc): (Vec<f64>, Vec<f64>, Vec<f64>) = match *domain {
            "pkg" => (
                report.steps.iter().map(|s| s.oracle_pkg_w).collect(),
                report.steps.iter().map(|s| s.kepler.dyn_pkg_w).collect(),
                report.steps.iter().map(|s| s.resource_centric.dyn_pkg_w).collect(),
            ),
            _ => (
                report.steps.iter().map(|s| s.oracle_dram_w).collect(),
                report.steps.iter().map(|s| s.kepler.dyn_dram_w).collect(),
                report.steps.iter().map(|s| s.resource_centric.dyn_dram_w).collect(),
            ),
        };
        let mut y_max = f64::NEG_INFINITY;
        for v in oracle.iter().chain(&kepler).chain(&rc) {
            y_max = y_max.max(*v);
        }
        let y_rng = (0.0, if y_max > 0.0 { y_max * 1.1 } else { 1.0 });

        // Frame and axes.
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            fmt_sig(panel.x0),
            fmt_sig(panel.y0),
            fmt_sig(panel.w),
            fmt_sig(panel.h)
        );
        let title = if *domain == "pkg" { "PKG dynamic (W)" } else { "DRAM dynamic (W)" };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="42" text-anchor="middle">{title}</text>"#,
            fmt_sig(panel.x0 + panel.w / 2.0)
        );
        // X tick labels: first and last step value.
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_sig(panel.sx(0.0)),
            fmt_sig(panel.y0 + panel.h + 18.0),
            fmt_sig(x_rng.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt_sig(panel.sx(1.0)),
            fmt_sig(panel.y0 + panel.h + 18.0),
            fmt_sig(x_rng.1)
        );
        // Y tick labels: 0 and the max.
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">0</text>"#,
            fmt_sig(panel.x0 - 6.0),
            fmt_sig(panel.sy(0.0) + 4.0)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            fmt_sig(panel.x0 - 6.0),
            fmt_sig(panel.sy(1.0) + 4.0),
            fmt_sig(y_rng.1)
        );

        for (series, color, name) in [
            (&oracle, "#1a7f37", "oracle"),
            (&kepler, "#cf222e", "kepler_ratio"),
            (&rc, "#0969da", "resource_centric"),
        ] {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" data-series="{name}_{domain}" points="{}"/>"#,
                polyline(&panel, &xs, series, x_rng, y_rng)
            );
        }
    }

    // Legend.
    for (i, (color, name)) in
        [("#1a7f37", "oracle"), ("#cf222e", "kepler_ratio"), ("#0969da", "resource_centric")]
            .iter()
            .enumerate()
    {
        let y = 470.0;
        let x = 120.0 + i as f64 * 220.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="12" height="4" fill="{color}"/>"#,
            fmt_sig(x),
            fmt_sig(y - 4.0)
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{y}">{name}</text>"#, fmt_sig(x + 18.0));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rows = tests; columns = {oracle pkg, oracle dram, estimator pkg,
/// estimator dram} x {min, max, avg} CV%. The oracle columns report the
/// stability of the validator meter series.
pub fn cv_table(reports: &[TestReport]) -> Result<(String, String)> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("cv table needs at least one report".into()));
    }
    let mut csv = String::from(
        "test,oracle_pkg_min,oracle_pkg_max,oracle_pkg_avg,\
         oracle_dram_min,oracle_dram_max,oracle_dram_avg,\
         estimator_pkg_min,estimator_pkg_max,estimator_pkg_avg,\
         estimator_dram_min,estimator_dram_max,estimator_dram_avg\n",
    );
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<10} {:>26} {:>26} {:>26} {:>26}",
        "test", "oracle pkg CV%", "oracle dram CV%", "estimator pkg CV%", "estimator dram CV%"
    );
    let _ = writeln!(
        text,
        "{:<10} {:>26} {:>26} {:>26} {:>26}",
        "", "min/max/avg", "min/max/avg", "min/max/avg", "min/max/avg"
    );

    for report in reports {
        let mut row_csv = report.test_id.clone();
        let mut row_text = format!("{:<10}", report.test_id);
        for pick in [
            |s: &crate::valframe::StepReport| s.stability.oracle_pkg.cv_percent,
            |s: &crate::valframe::StepReport| s.stability.oracle_dram.cv_percent,
            |s: &crate::valframe::StepReport| s.stability.estimator_pkg.cv_percent,
            |s: &crate::valframe::StepReport| s.stability.estimator_dram.cv_percent,
        ] {
            let cvs: Vec<f64> = report.steps.iter().map(pick).collect();
            let min = cvs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = cvs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let avg = cvs.iter().sum::<f64>() / cvs.len() as f64;
            let _ = write!(row_csv, ",{},{},{}", fmt_sig(min), fmt_sig(max), fmt_sig(avg));
            let cell = format!("{}/{}/{}", fmt_sig(min), fmt_sig(max), fmt_sig(avg));
            let _ = write!(row_text, " {cell:>26}");
        }
        csv.push_str(&row_csv);
        csv.push('\n');
        text.push_str(&row_text);
        text.push('\n');
    }
    Ok((csv, text))
}

/// Write `cv_table.csv` and `cv_table.txt`.
pub fn emit_cv_table(reports: &[TestReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let (csv, text) = cv_table(reports)?;
    let csv_path = out_dir.join("cv_table.csv");
    let txt_path = out_dir.join("cv_table.txt");
    std::fs::write(&csv_path, csv)?;
    std::fs::write(&txt_path, text)?;
    Ok(vec![csv_path, txt_path])
}

/// Write the directory manifest.
pub fn emit_manifest(bundle: &ReportBundle, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(bundle)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}
