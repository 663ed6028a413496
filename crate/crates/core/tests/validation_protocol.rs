//! Protocol-level checks: baseline behaviour, settle discipline, workload
//! stability and estimator invariances that the acceptance criteria do not
//! already pin down.

use std::path::Path;

use powerbench_core::error::Error;
use powerbench_core::scenario::ScenarioConfig;
use powerbench_core::valframe::{run_test, Engine, TestKind, STRESSOR_ID};

fn scenario() -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json");
    ScenarioConfig::load(&path).expect("default scenario loads")
}

#[test]
fn corunners_raise_the_baseline_monotonically() {
    let mut s = scenario();
    s.corunner_counts = vec![0, 2, 4];
    let report = run_test(&s, TestKind::T2Pkg, false).unwrap().report;
    let baselines: Vec<f64> = report.steps.iter().map(|s| s.baseline.mean_pkg_w).collect();
    for w in baselines.windows(2) {
        assert!(w[1] > w[0], "baseline did not grow with co-runners: {baselines:?}");
    }
    // Two co-runners at full tilt are worth ~2x the per-core full power.
    let per_core = 4.725 / 2.125 * 2.6;
    let delta = baselines[1] - baselines[0];
    assert!((delta - 2.0 * per_core).abs() / (2.0 * per_core) < 0.02, "delta {delta}");
}

#[test]
fn cstates_lower_the_measured_socket_total() {
    let report = run_test(&scenario(), TestKind::T3, false).unwrap().report;
    let (s1, s2) = (&report.steps[0], &report.steps[1]);
    assert!(s2.baseline.mean_pkg_w < s1.baseline.mean_pkg_w);
    let load1 = s1.cleaned_pkg_series.iter().sum::<f64>() / s1.cleaned_pkg_series.len() as f64;
    let load2 = s2.cleaned_pkg_series.iter().sum::<f64>() / s2.cleaned_pkg_series.len() as f64;
    assert!(load2 < load1, "loaded socket power did not drop with C-states");
    // The ratio estimator's idle report must not move (fixed estimate);
    // only its dynamic share absorbs the static savings.
    assert!((s1.kepler.idle_pkg_w - s2.kepler.idle_pkg_w).abs() < 1e-12);
    assert!(s2.kepler.dyn_pkg_w < s1.kepler.dyn_pkg_w);
}

#[test]
fn stressor_utilization_is_identical_across_the_whole_run() {
    let s = scenario();
    let mut engine = Engine::new(&s, "stability-probe").unwrap();
    engine.settle(s.durations.settle_s).unwrap();
    let (_, _) = engine.measure_baseline(s.durations.baseline_s).unwrap();
    let load = engine.run_load(&s.stressor_cpu).unwrap();
    let fractions: Vec<f64> = load
        .usages
        .iter()
        .map(|tick| {
            tick.iter()
                .find(|u| u.container_id == STRESSOR_ID)
                .map(|u| u.cpu_fraction)
                .unwrap()
        })
        .collect();
    assert!(!fractions.is_empty());
    for f in &fractions {
        assert_eq!(f.to_bits(), fractions[0].to_bits(), "utilization drifted");
    }
}

#[test]
fn corunners_do_not_touch_the_stressor_usage_sample() {
    let s = scenario();
    let stressor_usage = |k: usize| {
        let mut engine = Engine::new(&s, "independence-probe").unwrap();
        engine.set_corunner_count(k).unwrap();
        engine.settle(s.durations.settle_s).unwrap();
        let _ = engine.measure_baseline(s.durations.baseline_s).unwrap();
        let load = engine.run_load(&s.stressor_cpu).unwrap();
        load.usages[0]
            .iter()
            .find(|u| u.container_id == STRESSOR_ID)
            .cloned()
            .unwrap()
    };
    let alone = stressor_usage(0);
    let crowded = stressor_usage(12);
    assert_eq!(alone.cpu_fraction.to_bits(), crowded.cpu_fraction.to_bits());
    assert_eq!(alone.cycles.to_bits(), crowded.cycles.to_bits());
    assert_eq!(alone.bandwidth_gbs.to_bits(), crowded.bandwidth_gbs.to_bits());
}

#[test]
fn measurements_respect_the_settle_discipline() {
    let s = scenario();
    let mut engine = Engine::new(&s, "settle-probe").unwrap();
    engine.set_core_frequency(s.host_core, 1.0).unwrap();
    // No settle after the change: the baseline must refuse to run.
    let err = engine.measure_baseline(s.durations.baseline_s).unwrap_err();
    assert!(matches!(err, Error::Invariant(_)), "got {err}");

    engine.settle(s.durations.settle_s).unwrap();
    engine.measure_baseline(s.durations.baseline_s).unwrap();
}

#[test]
fn baseline_rejects_an_unstable_meter() {
    let mut s = scenario();
    s.relative_sigma = 0.05; // an implausibly jittery meter
    let mut engine = Engine::new(&s, "unstable-probe").unwrap();
    engine.settle(s.durations.settle_s).unwrap();
    let err = engine.measure_baseline(s.durations.baseline_s).unwrap_err();
    assert!(matches!(err, Error::BaselineRejected(_)), "got {err}");
}

#[test]
fn zero_noise_baseline_is_exact() {
    let mut s = scenario();
    s.relative_sigma = 0.0;
    let mut engine = Engine::new(&s, "exact-probe").unwrap();
    engine.settle(s.durations.settle_s).unwrap();
    let (stats, _) = engine.measure_baseline(s.durations.baseline_s).unwrap();
    assert_eq!(stats.sigma_pkg_w, 0.0);
    assert_eq!(stats.sigma_dram_w, 0.0);
}

#[test]
fn default_noise_baseline_cv_stays_in_band() {
    let s = scenario();
    let mut engine = Engine::new(&s, "band-probe").unwrap();
    engine.settle(s.durations.settle_s).unwrap();
    let (stats, _) = engine.measure_baseline(s.durations.baseline_s).unwrap();
    let cv = stats.sigma_pkg_w / stats.mean_pkg_w * 100.0;
    assert!(cv <= 0.35, "baseline CV {cv}%");
}

#[test]
fn insufficient_cores_for_corunners_is_a_configuration_error() {
    let s = scenario();
    let mut engine = Engine::new(&s, "capacity-probe").unwrap();
    // 12 fit (host + monitors own two cores of fourteen); 13 cannot.
    let err = engine.set_corunner_count(13).unwrap_err();
    assert!(matches!(err, Error::Configuration(_)), "got {err}");
}

#[test]
fn test_reports_are_a_pure_function_of_scenario_and_seed() {
    let s = scenario();
    let a = run_test(&s, TestKind::T3, false).unwrap().report;
    let b = run_test(&s, TestKind::T3, false).unwrap().report;
    assert_eq!(a, b);

    let mut other = s.clone();
    other.seed = s.seed + 1;
    let c = run_test(&other, TestKind::T3, false).unwrap().report;
    assert_ne!(a, c, "different seeds should perturb the noisy series");
}
