//! Accuracy-validation framework: isolation configuration, baselines,
//! the three validation tests plus the completed-pod check, data cleaning
//! and stability statistics.

mod engine;
mod runs;

pub use engine::{Engine, PhaseData, STRESSOR_ID};
pub use runs::{
    run_inactive_pod_check, run_test, run_test1, run_test2, run_test3, RunArtifacts, Test2Domain,
    TestKind,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Statistics of one baseline window of the validator meter (socket 1).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BaselineStats {
    pub duration_s: u64,
    pub mean_pkg_w: f64,
    pub mean_dram_w: f64,
    pub sigma_pkg_w: f64,
    pub sigma_dram_w: f64,
}

/// Relative stability of one series.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StabilityStats {
    pub mu: f64,
    pub sigma: f64,
    pub cv_percent: f64,
}

impl StabilityStats {
    pub fn from_series(series: &[f64]) -> Result<Self> {
        let mu = mean(series);
        let sigma = sample_std(series);
        let cv_percent = coefficient_of_variation(series)?;
        Ok(StabilityStats { mu, sigma, cv_percent })
    }
}

/// One accuracy verdict: estimate against reference at a margin.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComparisonVerdict {
    pub estimated_w: f64,
    pub reference_w: f64,
    pub deviation_fraction: f64,
    pub pass: bool,
}

/// Mean attributed power of one estimator over a step.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct EstimateSummary {
    pub idle_pkg_w: f64,
    pub dyn_pkg_w: f64,
    pub idle_dram_w: f64,
    pub dyn_dram_w: f64,
}

/// Stability of the step's series: the validator meter (the oracle's
/// measured projection) and the ratio estimator's per-window estimates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepStability {
    pub oracle_pkg: StabilityStats,
    pub oracle_dram: StabilityStats,
    pub estimator_pkg: StabilityStats,
    pub estimator_dram: StabilityStats,
}

/// Everything measured at one step of a validation test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepReport {
    pub label: String,
    /// The swept variable: frequency in GHz, co-runner count, or the
    /// C-state flag as 0/1.
    pub step_value: f64,
    pub baseline: BaselineStats,
    /// True stressor power from the simulator's oracle.
    pub oracle_pkg_w: f64,
    pub oracle_dram_w: f64,
    /// Validator subtraction: loaded socket mean minus baseline mean.
    pub reference_pkg_w: Option<f64>,
    pub reference_dram_w: Option<f64>,
    pub kepler: EstimateSummary,
    pub resource_centric: EstimateSummary,
    pub stability: StepStability,
    pub verdict_kepler_pkg: Option<ComparisonVerdict>,
    pub verdict_kepler_dram: Option<ComparisonVerdict>,
    pub verdict_resource_centric_pkg: Option<ComparisonVerdict>,
    pub verdict_resource_centric_dram: Option<ComparisonVerdict>,
    /// Ratio-model dynamic pool per domain (equals the attributed sum by
    /// the conservation invariant), mean over windows.
    pub kepler_node_dyn_pkg_w: f64,
    pub kepler_node_dyn_dram_w: f64,
    /// Share of the experimental socket's DRAM traffic originating from
    /// the host core during load.
    pub host_bandwidth_share: f64,
    pub window_count: usize,
    pub samples_total: usize,
    pub samples_kept: usize,
    /// Cleaned validator series, retained for the CSV/SVG artifacts.
    pub cleaned_pkg_series: Vec<f64>,
    pub cleaned_dram_series: Vec<f64>,
    /// Present only in the completed-pod check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inactive_check: Option<InactiveCheck>,
}

/// Per-window idle-attribution record of the completed-pod check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InactiveCheck {
    /// Idle watts attributed to the batch pods, summed, one per window.
    pub per_window_completed_idle_w: Vec<f64>,
    /// Smallest idle attribution over active containers, one per window.
    pub per_window_active_min_idle_w: Vec<f64>,
    /// Largest gap between attributed idle and the node idle pool.
    pub idle_pool_gap_w: f64,
}

/// Calibrated constants a report was produced with.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrationConstants {
    pub k_cap: f64,
    pub static_per_core_c0: f64,
    pub uncore_power: f64,
    pub dram_static: f64,
    pub dram_bw_coeff: f64,
    pub beta_pkg: f64,
    pub beta_dram: f64,
    pub cycles_per_request: f64,
    pub overhead_per_request_s: f64,
}

/// Full record of one validation test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TestReport {
    pub report_version: u32,
    pub test_id: String,
    pub description: String,
    pub scenario_name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub calibration: CalibrationConstants,
    /// The ratio estimator's startup idle estimate, node scope.
    pub fixed_idle_pkg_w: f64,
    pub fixed_idle_dram_w: f64,
    pub steps: Vec<StepReport>,
    /// Internal invariants held for the whole run. Accuracy verdicts are
    /// data, not failures.
    pub overall_pass: bool,
}

pub const REPORT_VERSION: u32 = 1;

pub fn mean(series: &[f64]) -> f64 {
    if series.is_empty() {
        return f64::NAN;
    }
    series.iter().sum::<f64>() / series.len() as f64
}

/// Sample standard deviation (n - 1 denominator). A constant series has
/// exactly zero deviation; the short-circuit keeps the two-pass formula's
/// rounding out of zero-noise runs.
pub fn sample_std(series: &[f64]) -> f64 {
    if series.len() < 2 || series.iter().all(|x| *x == series[0]) {
        return 0.0;
    }
    let m = mean(series);
    let var = series.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (series.len() - 1) as f64;
    var.sqrt()
}

/// CV% = sigma / mu * 100, sample standard deviation over the mean.
pub fn coefficient_of_variation(series: &[f64]) -> Result<f64> {
    let mu = mean(series);
    if !(mu > 0.0) {
        return Err(Error::UndefinedCv(format!("mean {mu} is not positive")));
    }
    Ok(sample_std(series) / mu * 100.0)
}

/// Linear-interpolation quantile (the numpy default).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Tukey cleaning: drop points outside `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`.
/// Refuses to drop more than 10% of the series.
pub fn clean_outliers(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 4 {
        return Err(Error::InputDomain(format!(
            "need at least 4 points to clean, got {}",
            series.len()
        )));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in power series"));
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo = q1 - 1.5 * iqr;
    let hi = q3 + 1.5 * iqr;
    let kept: Vec<f64> = series.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
    let dropped = series.len() - kept.len();
    if dropped as f64 > 0.10 * series.len() as f64 {
        return Err(Error::DataQuality(format!(
            "outlier rule would drop {dropped} of {} points",
            series.len()
        )));
    }
    Ok(kept)
}

/// Accuracy verdict at a relative margin.
pub fn compare(estimated_w: f64, reference_w: f64, margin: f64) -> Result<ComparisonVerdict> {
    if !(reference_w > 0.0) {
        return Err(Error::InputDomain(format!(
            "comparison reference must be positive, got {reference_w}"
        )));
    }
    let deviation_fraction = (estimated_w - reference_w).abs() / reference_w;
    Ok(ComparisonVerdict {
        estimated_w,
        reference_w,
        deviation_fraction,
        pass: deviation_fraction <= margin,
    })
}

/// R^2 of the least-squares line through (xs, ys). A constant series is a
/// perfect linear fit.
pub fn linear_fit_r2(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 || n < 2.0 {
        return 0.0;
    }
    (sxy * sxy) / (sxx * syy)
}
