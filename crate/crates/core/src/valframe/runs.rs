//! The validation protocol: Tests 1-3 and the completed-pod check.
//!
//! Every test follows the same discipline per step: configure, settle
//! 30 s, record a 120 s quiescent baseline, drive 100 sequential requests
//! with 1 s sampling, settle 30 s. The step's reference container power is
//! the cleaned loaded-socket mean minus the baseline mean; both estimators
//! are evaluated on 30 s windows of the same interval.

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionResult, Estimator};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::telemetry::{PowerSample, UsageSample};
use crate::valframe::engine::{Engine, PhaseData, STRESSOR_ID};
use crate::valframe::{
    compare, mean, BaselineStats, CalibrationConstants, ComparisonVerdict, EstimateSummary,
    StabilityStats, StepReport, StepStability, TestReport, REPORT_VERSION,
};
use crate::workloads::Lifecycle;

/// Which power domain Test 2 stresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Test2Domain {
    Pkg,
    Dram,
}

/// All runnable tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    T1,
    T2Pkg,
    T2Dram,
    T3,
    Inactive,
}

impl TestKind {
    pub fn id(self) -> &'static str {
        match self {
            TestKind::T1 => "t1",
            TestKind::T2Pkg => "t2-pkg",
            TestKind::T2Dram => "t2-dram",
            TestKind::T3 => "t3",
            TestKind::Inactive => "inactive",
        }
    }

    pub fn all() -> [TestKind; 5] {
        [TestKind::T1, TestKind::T2Pkg, TestKind::T2Dram, TestKind::T3, TestKind::Inactive]
    }

    pub fn parse(s: &str) -> Result<TestKind> {
        match s {
            "t1" => Ok(TestKind::T1),
            "t2-pkg" => Ok(TestKind::T2Pkg),
            "t2-dram" => Ok(TestKind::T2Dram),
            "t3" => Ok(TestKind::T3),
            "inactive" => Ok(TestKind::Inactive),
            other => Err(Error::Configuration(format!(
                "unknown test '{other}' (expected t1, t2-pkg, t2-dram, t3, inactive)"
            ))),
        }
    }
}

/// A finished run plus optional raw telemetry dumps.
pub struct RunArtifacts {
    pub report: TestReport,
    pub raw_power: Vec<PowerSample>,
    pub raw_usage: Vec<UsageSample>,
}

pub fn run_test(scenario: &ScenarioConfig, kind: TestKind, collect_raw: bool) -> Result<RunArtifacts> {
    match kind {
        TestKind::T1 => test1(scenario, collect_raw),
        TestKind::T2Pkg => test2(scenario, Test2Domain::Pkg, collect_raw),
        TestKind::T2Dram => test2(scenario, Test2Domain::Dram, collect_raw),
        TestKind::T3 => test3(scenario, collect_raw),
        TestKind::Inactive => inactive_pod_check(scenario, collect_raw),
    }
}

pub fn run_test1(scenario: &ScenarioConfig) -> Result<TestReport> {
    Ok(test1(scenario, false)?.report)
}

pub fn run_test2(scenario: &ScenarioConfig, domain: Test2Domain) -> Result<TestReport> {
    Ok(test2(scenario, domain, false)?.report)
}

pub fn run_test3(scenario: &ScenarioConfig) -> Result<TestReport> {
    Ok(test3(scenario, false)?.report)
}

pub fn run_inactive_pod_check(scenario: &ScenarioConfig) -> Result<TestReport> {
    Ok(inactive_pod_check(scenario, false)?.report)
}

fn calibration_constants(scenario: &ScenarioConfig) -> CalibrationConstants {
    CalibrationConstants {
        k_cap: scenario.socket.dvfs.k_cap,
        static_per_core_c0: scenario.socket.static_per_core_c0,
        uncore_power: scenario.socket.uncore_power,
        dram_static: scenario.socket.dram_static,
        dram_bw_coeff: scenario.socket.dram_bw_coeff,
        beta_pkg: scenario.estimator.beta_pkg,
        beta_dram: scenario.estimator.beta_dram,
        cycles_per_request: scenario.stressor_cpu.cycles_per_request,
        overhead_per_request_s: scenario.stressor_cpu.overhead_per_request_s,
    }
}

fn report_shell(scenario: &ScenarioConfig, kind: TestKind, description: &str) -> TestReport {
    TestReport {
        report_version: REPORT_VERSION,
        test_id: kind.id().to_string(),
        description: description.to_string(),
        scenario_name: scenario.name.clone(),
        scenario_hash: scenario.content_hash(),
        seed: scenario.seed,
        calibration: calibration_constants(scenario),
        fixed_idle_pkg_w: 0.0,
        fixed_idle_dram_w: 0.0,
        steps: Vec::new(),
        overall_pass: false,
    }
}

/// Per-estimator step summary: means over the phase's windows of the
/// stressor's attributed power, plus the dynamic series per domain.
fn summarize(windows: &[AttributionResult], id: &str) -> (EstimateSummary, Vec<f64>, Vec<f64>) {
    let pkg: Vec<f64> = windows.iter().map(|w| w.entry(id).dyn_pkg).collect();
    let dram: Vec<f64> = windows.iter().map(|w| w.entry(id).dyn_dram).collect();
    let summary = EstimateSummary {
        idle_pkg_w: mean(&windows.iter().map(|w| w.entry(id).idle_pkg).collect::<Vec<_>>()),
        dyn_pkg_w: mean(&pkg),
        idle_dram_w: mean(&windows.iter().map(|w| w.entry(id).idle_dram).collect::<Vec<_>>()),
        dyn_dram_w: mean(&dram),
    };
    (summary, pkg, dram)
}

struct StepContext<'a> {
    engine: &'a Engine,
    kepler: &'a Estimator,
    resource_centric: &'a Estimator,
    margin: f64,
}

fn build_step(
    ctx: &StepContext,
    label: &str,
    step_value: f64,
    baseline: BaselineStats,
    load: &PhaseData,
) -> Result<StepReport> {
    let (cleaned_pkg, cleaned_dram) = Engine::cleaned_validator_series(load)?;
    let reference_pkg = mean(&cleaned_pkg) - baseline.mean_pkg_w;
    // Noise can push the DRAM subtraction below zero on CPU-only loads.
    let reference_dram = (mean(&cleaned_dram) - baseline.mean_dram_w).max(0.0);

    let kepler_windows = ctx.engine.estimate_windows(ctx.kepler, load)?;
    let rc_windows = ctx.engine.estimate_windows(ctx.resource_centric, load)?;
    let (kepler_sum, kepler_pkg_series, kepler_dram_series) =
        summarize(&kepler_windows, STRESSOR_ID);
    let (rc_sum, _, _) = summarize(&rc_windows, STRESSOR_ID);
    let node_dyn_pkg =
        mean(&kepler_windows.iter().map(|w| w.node_dyn_pkg).collect::<Vec<_>>());
    let node_dyn_dram =
        mean(&kepler_windows.iter().map(|w| w.node_dyn_dram).collect::<Vec<_>>());
    let host_share: Vec<f64> = load
        .host_bw
        .iter()
        .zip(&load.socket_bw)
        .filter(|(_, total)| **total > 0.0)
        .map(|(host, total)| host / total)
        .collect();

    let verdict =
        |est: f64, reference: f64| -> Result<Option<ComparisonVerdict>> {
            if reference > 0.0 {
                Ok(Some(compare(est, reference, ctx.margin)?))
            } else {
                Ok(None)
            }
        };

    Ok(StepReport {
        label: label.to_string(),
        step_value,
        baseline,
        oracle_pkg_w: mean(&load.oracle_pkg),
        oracle_dram_w: mean(&load.oracle_dram),
        reference_pkg_w: Some(reference_pkg),
        reference_dram_w: Some(reference_dram),
        kepler: kepler_sum,
        resource_centric: rc_sum,
        stability: StepStability {
            oracle_pkg: StabilityStats::from_series(&cleaned_pkg)?,
            oracle_dram: StabilityStats::from_series(&cleaned_dram)?,
            estimator_pkg: StabilityStats::from_series(&kepler_pkg_series)?,
            estimator_dram: StabilityStats::from_series(&kepler_dram_series)?,
        },
        verdict_kepler_pkg: verdict(kepler_sum.dyn_pkg_w, reference_pkg)?,
        verdict_kepler_dram: verdict(kepler_sum.dyn_dram_w, reference_dram)?,
        verdict_resource_centric_pkg: verdict(rc_sum.dyn_pkg_w, reference_pkg)?,
        verdict_resource_centric_dram: verdict(rc_sum.dyn_dram_w, reference_dram)?,
        kepler_node_dyn_pkg_w: node_dyn_pkg,
        kepler_node_dyn_dram_w: node_dyn_dram,
        host_bandwidth_share: mean(&host_share),
        window_count: kepler_windows.len(),
        samples_total: load.sock_pkg.len(),
        samples_kept: cleaned_pkg.len(),
        cleaned_pkg_series: cleaned_pkg,
        cleaned_dram_series: cleaned_dram,
        inactive_check: None,
    })
}

/// Test 1: frequency sweep on the host core, everything else pinned at
/// f_max. CPU-bound stressor.
fn test1(scenario: &ScenarioConfig, collect_raw: bool) -> Result<RunArtifacts> {
    let mut engine = Engine::new(scenario, "t1")?;
    engine.collect_raw = collect_raw;
    let mut report = report_shell(
        scenario,
        TestKind::T1,
        "Accuracy under dynamic CPU frequency scaling (host core swept, CPU-bound stressor)",
    );
    let settle = scenario.durations.settle_s;
    let baseline_s = scenario.durations.baseline_s;
    let mut estimators: Option<(Estimator, Estimator)> = None;

    for f in scenario.socket.dvfs.grid() {
        engine.set_core_frequency(scenario.host_core, f)?;
        engine.settle(settle)?;
        let (baseline, baseline_data) = engine.measure_baseline(baseline_s)?;
        if estimators.is_none() {
            estimators = Some(engine.init_estimators(&baseline_data)?);
        }
        let (kepler, rc) = estimators.as_ref().expect("initialized above");
        let load = engine.run_load(&scenario.stressor_cpu)?;
        engine.settle(settle)?;
        let ctx = StepContext {
            engine: &engine,
            kepler,
            resource_centric: rc,
            margin: scenario.margin,
        };
        report
            .steps
            .push(build_step(&ctx, &format!("f={f:.1}GHz"), f, baseline, &load)?);
    }
    let (kepler, _) = estimators.expect("at least one step");
    report.fixed_idle_pkg_w = kepler.fixed_idle_pkg;
    report.fixed_idle_dram_w = kepler.fixed_idle_dram;
    report.overall_pass = true;
    Ok(RunArtifacts {
        report,
        raw_power: std::mem::take(&mut engine.raw_power),
        raw_usage: std::mem::take(&mut engine.raw_usage),
    })
}

/// Test 2: co-runner sweep at fixed f_max. The stressor is CPU-bound for
/// the PKG step and memory-bound for the DRAM step; co-runners persist.
fn test2(scenario: &ScenarioConfig, domain: Test2Domain, collect_raw: bool) -> Result<RunArtifacts> {
    let (kind, stressor, description) = match domain {
        Test2Domain::Pkg => (
            TestKind::T2Pkg,
            &scenario.stressor_cpu,
            "Accuracy of dynamic PKG attribution under multi-tenancy (CPU-bound stressor)",
        ),
        Test2Domain::Dram => (
            TestKind::T2Dram,
            &scenario.stressor_memory,
            "Accuracy of dynamic DRAM attribution under multi-tenancy (memory-bound stressor)",
        ),
    };
    let mut engine = Engine::new(scenario, kind.id())?;
    engine.collect_raw = collect_raw;
    let mut report = report_shell(scenario, kind, description);
    let settle = scenario.durations.settle_s;
    let baseline_s = scenario.durations.baseline_s;
    let mut estimators: Option<(Estimator, Estimator)> = None;

    for &k in &scenario.corunner_counts {
        engine.set_corunner_count(k)?;
        engine.settle(settle)?;
        let (baseline, baseline_data) = engine.measure_baseline(baseline_s)?;
        if estimators.is_none() {
            estimators = Some(engine.init_estimators(&baseline_data)?);
        }
        let (kepler, rc) = estimators.as_ref().expect("initialized above");
        let load = engine.run_load(stressor)?;
        engine.settle(settle)?;
        let ctx = StepContext {
            engine: &engine,
            kepler,
            resource_centric: rc,
            margin: scenario.margin,
        };
        report
            .steps
            .push(build_step(&ctx, &format!("k={k}"), k as f64, baseline, &load)?);
    }
    let (kepler, _) = estimators.expect("at least one step");
    report.fixed_idle_pkg_w = kepler.fixed_idle_pkg;
    report.fixed_idle_dram_w = kepler.fixed_idle_dram;
    report.overall_pass = true;
    Ok(RunArtifacts {
        report,
        raw_power: std::mem::take(&mut engine.raw_power),
        raw_usage: std::mem::take(&mut engine.raw_usage),
    })
}

/// Test 3: identical CPU-bound runs with C-states off, then enabled on
/// every socket-0 core except the host (which stays locked in C0).
fn test3(scenario: &ScenarioConfig, collect_raw: bool) -> Result<RunArtifacts> {
    let mut engine = Engine::new(scenario, "t3")?;
    engine.collect_raw = collect_raw;
    let mut report = report_shell(
        scenario,
        TestKind::T3,
        "Accuracy under C-state transitions (C1/C3/C6 enabled on idle cores between steps)",
    );
    let settle = scenario.durations.settle_s;
    let baseline_s = scenario.durations.baseline_s;

    engine.settle(settle)?;
    let (baseline1, baseline_data) = engine.measure_baseline(baseline_s)?;
    let (kepler, rc) = engine.init_estimators(&baseline_data)?;
    let load1 = engine.run_load(&scenario.stressor_cpu)?;
    engine.settle(settle)?;
    {
        let ctx = StepContext {
            engine: &engine,
            kepler: &kepler,
            resource_centric: &rc,
            margin: scenario.margin,
        };
        report.steps.push(build_step(&ctx, "cstates_off", 0.0, baseline1, &load1)?);
    }

    engine.set_cstates_except_host(true)?;
    engine.settle(settle)?;
    let (baseline2, _) = engine.measure_baseline(baseline_s)?;
    let load2 = engine.run_load(&scenario.stressor_cpu)?;
    engine.settle(settle)?;
    {
        let ctx = StepContext {
            engine: &engine,
            kepler: &kepler,
            resource_centric: &rc,
            margin: scenario.margin,
        };
        report.steps.push(build_step(&ctx, "cstates_on", 1.0, baseline2, &load2)?);
    }

    report.fixed_idle_pkg_w = kepler.fixed_idle_pkg;
    report.fixed_idle_dram_w = kepler.fixed_idle_dram;
    report.overall_pass = true;
    Ok(RunArtifacts {
        report,
        raw_power: std::mem::take(&mut engine.raw_power),
        raw_usage: std::mem::take(&mut engine.raw_usage),
    })
}

/// Completed-pod check: batch jobs run to completion and must then stop
/// receiving idle power, while the idle pool stays conserved.
fn inactive_pod_check(scenario: &ScenarioConfig, collect_raw: bool) -> Result<RunArtifacts> {
    let mut engine = Engine::new(scenario, "inactive")?;
    engine.collect_raw = collect_raw;
    let mut report = report_shell(
        scenario,
        TestKind::Inactive,
        "Idle attribution to completed batch pods in a dedicated namespace",
    );
    let settle = scenario.durations.settle_s;
    let baseline_s = scenario.durations.baseline_s;

    engine.settle(settle)?;
    let (baseline, baseline_data) = engine.measure_baseline(baseline_s)?;
    let (kepler, rc) = engine.init_estimators(&baseline_data)?;
    let batch_ids = engine.deploy_batch_jobs(scenario.batch.count)?;
    engine.settle(settle)?;

    let mut running = PhaseData::default();
    engine.observe(scenario.batch.runtime_s, &mut running)?;

    engine.complete_batch_jobs(&batch_ids)?;
    engine.settle(settle)?;
    let mut completed = PhaseData::default();
    engine.observe(scenario.batch.runtime_s, &mut completed)?;

    for (label, value, phase, jobs_done) in [
        ("batch_running", 0.0, &running, false),
        ("batch_completed", 1.0, &completed, true),
    ] {
        let windows = engine.estimate_windows(&kepler, phase)?;
        let _ = engine.estimate_windows(&rc, phase)?;
        let mut completed_idle = Vec::new();
        let mut active_min_idle = Vec::new();
        let mut max_pool_gap: f64 = 0.0;
        for w in &windows {
            let batch_idle: f64 = batch_ids.iter().map(|id| w.entry(id).idle_pkg).sum();
            completed_idle.push(batch_idle);
            let active_min = engine
                .workloads
                .deployments
                .values()
                .filter(|d| d.lifecycle == Lifecycle::Active)
                .map(|d| w.entry(&d.container_id).idle_pkg)
                .fold(f64::INFINITY, f64::min);
            active_min_idle.push(active_min);
            let (idle_sum, _) = w.attributed_idle_sums();
            max_pool_gap = max_pool_gap.max((idle_sum - w.node_idle_pkg).abs());
        }
        if jobs_done {
            if completed_idle.iter().any(|&w| w != 0.0) {
                return Err(Error::Invariant(
                    "completed batch pods still receive idle power".into(),
                ));
            }
            if active_min_idle.iter().any(|&w| !(w > 0.0)) {
                return Err(Error::Invariant(
                    "an active container received no idle power".into(),
                ));
            }
        }
        if max_pool_gap > 1e-9 {
            return Err(Error::Invariant(format!(
                "idle pool not conserved: gap {max_pool_gap}"
            )));
        }

        let (kepler_sum, _, _) = summarize(&windows, STRESSOR_ID);
        let (cleaned_pkg, cleaned_dram) = Engine::cleaned_validator_series(phase)?;
        report.steps.push(StepReport {
            label: label.to_string(),
            step_value: value,
            baseline: baseline.clone(),
            oracle_pkg_w: mean(&phase.oracle_pkg),
            oracle_dram_w: mean(&phase.oracle_dram),
            reference_pkg_w: None,
            reference_dram_w: None,
            kepler: kepler_sum,
            resource_centric: EstimateSummary::default(),
            stability: StepStability {
                oracle_pkg: StabilityStats::from_series(&cleaned_pkg)?,
                oracle_dram: StabilityStats::from_series(&cleaned_dram)?,
                estimator_pkg: StabilityStats {
                    mu: mean(&completed_idle),
                    sigma: 0.0,
                    cv_percent: 0.0,
                },
                estimator_dram: StabilityStats { mu: 0.0, sigma: 0.0, cv_percent: 0.0 },
            },
            verdict_kepler_pkg: None,
            verdict_kepler_dram: None,
            verdict_resource_centric_pkg: None,
            verdict_resource_centric_dram: None,
            kepler_node_dyn_pkg_w: mean(
                &windows.iter().map(|w| w.node_dyn_pkg).collect::<Vec<_>>(),
            ),
            kepler_node_dyn_dram_w: mean(
                &windows.iter().map(|w| w.node_dyn_dram).collect::<Vec<_>>(),
            ),
            host_bandwidth_share: 0.0,
            window_count: windows.len(),
            samples_total: phase.sock_pkg.len(),
            samples_kept: cleaned_pkg.len(),
            cleaned_pkg_series: cleaned_pkg,
            cleaned_dram_series: cleaned_dram,
            inactive_check: Some(crate::valframe::InactiveCheck {
                per_window_completed_idle_w: completed_idle,
                per_window_active_min_idle_w: active_min_idle,
                idle_pool_gap_w: max_pool_gap,
            }),
        });
    }

    report.fixed_idle_pkg_w = kepler.fixed_idle_pkg;
    report.fixed_idle_dram_w = kepler.fixed_idle_dram;
    report.overall_pass = true;
    Ok(RunArtifacts {
        report,
        raw_power: std::mem::take(&mut engine.raw_power),
        raw_usage: std::mem::take(&mut engine.raw_usage),
    })
}
