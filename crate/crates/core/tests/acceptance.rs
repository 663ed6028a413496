//! Acceptance suite: one test per shipped criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; every tolerance is pinned in code here.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use powerbench_core::attribution::allocate_idle;
use powerbench_core::report::{emit_report, render_svg, series_csv};
use powerbench_core::scenario::{default_socket_spec, ScenarioConfig};
use powerbench_core::simnode::{oracle_container_power, socket_power, NodeState};
use powerbench_core::valframe::{linear_fit_r2, run_test, TestKind, TestReport};
use powerbench_core::workloads::{ContainerDeployment, Lifecycle, QosClass};

struct Fixture {
    noisy: BTreeMap<&'static str, TestReport>,
    noiseless: BTreeMap<&'static str, TestReport>,
}

fn scenario() -> ScenarioConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.json");
    ScenarioConfig::load(&path).expect("default scenario loads")
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let noisy_scenario = scenario();
        let mut noiseless_scenario = noisy_scenario.clone();
        noiseless_scenario.relative_sigma = 0.0;

        let mut noisy = BTreeMap::new();
        for kind in TestKind::all() {
            let report = run_test(&noisy_scenario, kind, false).expect("noisy run").report;
            noisy.insert(kind.id(), report);
        }
        let mut noiseless = BTreeMap::new();
        for kind in [TestKind::T1, TestKind::T2Pkg, TestKind::T2Dram, TestKind::T3] {
            let report = run_test(&noiseless_scenario, kind, false).expect("noiseless run").report;
            noiseless.insert(kind.id(), report);
        }
        Fixture { noisy, noiseless }
    })
}

fn conclude(criterion: u32, description: &str, violations: Vec<String>) {
    if violations.is_empty() {
        println!("criterion {criterion}: PASS - {description}");
    } else {
        println!("criterion {criterion}: FAIL - {description}");
        for v in &violations {
            println!("  - {v}");
        }
        panic!("criterion {criterion} failed with {} violation(s)", violations.len());
    }
}

#[test]
fn criterion_01_oracle_additivity_and_locality() {
    let spec = default_socket_spec();
    let grid = spec.dvfs.grid();
    let mut rng = ChaCha12Rng::seed_from_u64(0xACCE01);
    let mut violations = Vec::new();

    for case in 0..10_000 {
        let mut node = NodeState::new(spec.clone(), 2).unwrap();
        for core_id in 0..node.cores.len() {
            let f = grid[rng.random_range(0..grid.len())];
            let enabled = rng.random_bool(0.5);
            let u: f64 = rng.random_range(0.0..=1.0);
            let core = node.core_mut(core_id).unwrap();
            core.frequency_ghz = f;
            core.cstates_enabled = enabled;
            core.utilization = u;
            core.refresh_residency(&spec.cstates);
            if rng.random_bool(0.2) {
                node.native_bandwidth.insert(core_id, rng.random_range(0.0..4.0));
            }
        }
        let target_core = rng.random_range(0..spec.core_count);
        node.pin_container("probe", target_core).unwrap();
        node.container_bandwidth.insert("probe".into(), rng.random_range(0.0..2.0));

        for socket in 0..2 {
            let b = socket_power(&node, socket).unwrap();
            let (pkg_sum, dram_sum) = b.component_sums();
            if (pkg_sum - b.pkg).abs() > 1e-9 || (dram_sum - b.dram).abs() > 1e-9 {
                violations.push(format!("case {case}: additivity broken on socket {socket}"));
            }
        }

        let before = oracle_container_power(&node, "probe").unwrap();
        for core_id in 0..node.cores.len() {
            if core_id == target_core {
                continue;
            }
            let f = grid[rng.random_range(0..grid.len())];
            let enabled = rng.random_bool(0.5);
            let u: f64 = rng.random_range(0.0..=1.0);
            let core = node.core_mut(core_id).unwrap();
            core.frequency_ghz = f;
            core.cstates_enabled = enabled;
            core.utilization = u;
            core.refresh_residency(&spec.cstates);
            node.native_bandwidth.insert(core_id, rng.random_range(0.0..8.0));
        }
        let after = oracle_container_power(&node, "probe").unwrap();
        if before.0.to_bits() != after.0.to_bits() || before.1.to_bits() != after.1.to_bits() {
            violations.push(format!("case {case}: oracle moved under foreign-core mutation"));
        }
        if !violations.is_empty() {
            break;
        }
    }
    conclude(
        1,
        "10,000 randomized states: additivity within 1e-9, oracle bit-stable under \
         foreign-core mutation",
        violations,
    );
}

#[test]
fn criterion_02_baseline_subtraction_exactness() {
    let fx = fixture();
    let mut violations = Vec::new();
    for id in ["t1", "t2-pkg", "t2-dram", "t3"] {
        for step in &fx.noiseless[id].steps {
            let ref_pkg = step.reference_pkg_w.unwrap();
            let ref_dram = step.reference_dram_w.unwrap();
            if (ref_pkg - step.oracle_pkg_w).abs() > 1e-6 {
                violations.push(format!(
                    "{id} {}: pkg reference {} vs oracle {}",
                    step.label, ref_pkg, step.oracle_pkg_w
                ));
            }
            if (ref_dram - step.oracle_dram_w).abs() > 1e-6 {
                violations.push(format!(
                    "{id} {}: dram reference {} vs oracle {}",
                    step.label, ref_dram, step.oracle_dram_w
                ));
            }
        }
    }
    conclude(
        2,
        "zero-noise Tests 1-3: meter-minus-baseline equals the oracle within 1e-6 W",
        violations,
    );
}

#[test]
fn criterion_03_test1_trends() {
    let report = &fixture().noisy["t1"];
    let mut violations = Vec::new();
    if report.steps.len() != 9 {
        violations.push(format!("expected 9 frequency steps, got {}", report.steps.len()));
    }
    let oracle: Vec<f64> = report.steps.iter().map(|s| s.oracle_pkg_w).collect();
    if !oracle.windows(2).all(|w| w[1] > w[0]) {
        violations.push(format!("oracle pkg not strictly increasing: {oracle:?}"));
    }
    let kepler: Vec<f64> = report.steps.iter().map(|s| s.kepler.dyn_pkg_w).collect();
    if !kepler.windows(2).all(|w| w[1] < w[0]) {
        violations.push(format!("kepler pkg not strictly decreasing: {kepler:?}"));
    }
    let peak = report
        .steps
        .iter()
        .map(|s| s.kepler.dyn_pkg_w / s.reference_pkg_w.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    if !(10.0..=20.0).contains(&peak) {
        violations.push(format!("peak overestimation {peak:.2}x outside [10, 20]x"));
    }
    for s in &report.steps {
        if !(0.01..=0.05).contains(&s.oracle_dram_w) {
            violations.push(format!("{}: oracle dram {} outside [0.01, 0.05]", s.label, s.oracle_dram_w));
        }
        if !(0.25..=0.45).contains(&s.kepler.dyn_dram_w) {
            violations.push(format!(
                "{}: kepler dram {} outside [0.25, 0.45]",
                s.label, s.kepler.dyn_dram_w
            ));
        }
    }
    conclude(
        3,
        "Test 1: oracle rises, ratio model falls, peak overestimation in [10, 20]x, \
         DRAM bands hold",
        violations,
    );
}

#[test]
fn criterion_04_test2_pkg() {
    let report = &fixture().noisy["t2-pkg"];
    let mut violations = Vec::new();
    let oracle: Vec<f64> = report.steps.iter().map(|s| s.oracle_pkg_w).collect();
    let spread = (oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - oracle.iter().copied().fold(f64::INFINITY, f64::min))
        / oracle[0];
    if spread > 0.02 {
        violations.push(format!("oracle varies {:.3}% > 2% across co-runners", spread * 100.0));
    }
    let kepler: Vec<f64> = report.steps.iter().map(|s| s.kepler.dyn_pkg_w).collect();
    if !kepler.windows(2).all(|w| w[1] <= w[0] + 1e-9) {
        violations.push(format!("kepler estimate not non-increasing: {kepler:?}"));
    }
    let ks: Vec<f64> = report.steps.iter().map(|s| s.step_value).collect();
    let r2 = linear_fit_r2(&ks, &kepler);
    if r2 < 0.9 {
        violations.push(format!("linear fit R^2 {r2:.3} below 0.9"));
    }
    conclude(
        4,
        "Test 2 PKG: oracle steady within 2%, ratio model declines near-linearly (R^2 >= 0.9)",
        violations,
    );
}

#[test]
fn criterion_05_test2_dram() {
    let report = &fixture().noisy["t2-dram"];
    let mut violations = Vec::new();
    let totals: Vec<f64> = report.steps.iter().map(|s| s.kepler_node_dyn_dram_w).collect();
    let hi = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
    if (hi - lo) / lo > 0.05 {
        violations.push(format!("attributed DRAM total varies more than 5%: {totals:?}"));
    }
    let stressor: Vec<f64> = report.steps.iter().map(|s| s.kepler.dyn_dram_w).collect();
    if !stressor.windows(2).all(|w| w[1] < w[0]) {
        violations.push(format!("stressor DRAM share not strictly decreasing: {stressor:?}"));
    }
    for s in &report.steps {
        if s.host_bandwidth_share < 0.99 {
            violations.push(format!(
                "{}: host core carries only {:.2}% of socket bandwidth",
                s.label,
                s.host_bandwidth_share * 100.0
            ));
        }
    }
    conclude(
        5,
        "Test 2 DRAM: attributed total steady within 5%, stressor share falls, host core \
         carries >= 99% of socket bandwidth",
        violations,
    );
}

#[test]
fn criterion_06_test3() {
    let report = &fixture().noisy["t3"];
    let mut violations = Vec::new();
    let (s1, s2) = (&report.steps[0], &report.steps[1]);
    for s in [s1, s2] {
        if (s.oracle_pkg_w - 2.6).abs() / 2.6 > 0.05 {
            violations.push(format!("{}: oracle {} not 2.6 W +/- 5%", s.label, s.oracle_pkg_w));
        }
    }
    if (s1.oracle_pkg_w - s2.oracle_pkg_w).abs() / s1.oracle_pkg_w > 0.05 {
        violations.push("oracle differs across steps by more than 5%".into());
    }
    let drop = s2.kepler.dyn_pkg_w / s1.kepler.dyn_pkg_w;
    if (drop - 0.504).abs() > 0.10 {
        violations.push(format!("kepler step2/step1 ratio {drop:.3} outside 0.504 +/- 0.10"));
    }
    conclude(
        6,
        "Test 3: oracle steady at 2.6 W while the ratio model drops to ~50.4%",
        violations,
    );
}

#[test]
fn criterion_07_idle_attribution() {
    let fx = fixture();
    let mut violations = Vec::new();

    // The GHG example: 8 of 64 cores of a 160 W pool is exactly 20 W.
    let mut deps = BTreeMap::new();
    deps.insert(
        "app".to_string(),
        ContainerDeployment {
            container_id: "app".into(),
            namespace: "ns".into(),
            pinned_core: 0,
            qos: QosClass::Burstable,
            memory_limit_mb: 512,
            requested_cores: 8,
            lifecycle: Lifecycle::Active,
        },
    );
    let share = allocate_idle(&deps, 160.0, 64).unwrap()["app"];
    if share != 20.0 {
        violations.push(format!("8/64 cores of 160 W gave {share} W, wanted exactly 20"));
    }

    for id in ["t1", "t2-pkg"] {
        let idles: Vec<f64> = fx.noisy[id].steps.iter().map(|s| s.kepler.idle_pkg_w).collect();
        if idles.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12) {
            violations.push(format!("{id}: idle attribution moved across steps: {idles:?}"));
        }
    }

    let inactive = &fx.noisy["inactive"];
    let completed_step = inactive
        .steps
        .iter()
        .find(|s| s.label == "batch_completed")
        .expect("completed step present");
    let check = completed_step.inactive_check.as_ref().expect("inactive data");
    if check.per_window_completed_idle_w.iter().any(|&w| w != 0.0) {
        violations.push(format!(
            "completed pods received idle power: {:?}",
            check.per_window_completed_idle_w
        ));
    }
    if check.per_window_active_min_idle_w.iter().any(|&w| !(w > 0.0)) {
        violations.push("an active container received no idle power".into());
    }
    if check.idle_pool_gap_w > 1e-9 {
        violations.push(format!("idle pool conservation gap {} > 1e-9", check.idle_pool_gap_w));
    }
    conclude(
        7,
        "idle allocation: exact GHG share, invariant across frequency and co-runners, \
         zero for completed pods, pool conserved",
        violations,
    );
}

#[test]
fn criterion_08_stability_table() {
    let fx = fixture();
    let mut violations = Vec::new();
    for (id, report) in &fx.noisy {
        for s in &report.steps {
            for (name, cv) in [
                ("oracle pkg", s.stability.oracle_pkg.cv_percent),
                ("oracle dram", s.stability.oracle_dram.cv_percent),
            ] {
                if cv > 0.35 {
                    violations.push(format!("{id} {}: {name} CV {cv:.3}% > 0.35%", s.label));
                }
            }
            for (name, cv) in [
                ("estimator pkg", s.stability.estimator_pkg.cv_percent),
                ("estimator dram", s.stability.estimator_dram.cv_percent),
            ] {
                if cv > 13.0 {
                    violations.push(format!("{id} {}: {name} CV {cv:.3}% > 13%", s.label));
                }
            }
        }
    }
    conclude(
        8,
        "default noise and seed: meter CVs <= 0.35% per step, estimator CVs <= 13%",
        violations,
    );
}

#[test]
fn criterion_09_discriminative_power() {
    let fx = fixture();
    let mut violations = Vec::new();
    for id in ["t1", "t2-pkg", "t2-dram", "t3"] {
        let report = &fx.noiseless[id];
        for s in &report.steps {
            for (domain, verdict) in [
                ("pkg", &s.verdict_resource_centric_pkg),
                ("dram", &s.verdict_resource_centric_dram),
            ] {
                match verdict {
                    Some(v) if v.pass => {}
                    Some(v) => violations.push(format!(
                        "{id} {}: resource-centric {domain} off by {:.2}%",
                        s.label,
                        v.deviation_fraction * 100.0
                    )),
                    None => violations.push(format!("{id} {}: missing {domain} verdict", s.label)),
                }
            }
        }
        let kepler_failed = report.steps.iter().any(|s| {
            s.verdict_kepler_pkg.as_ref().is_some_and(|v| !v.pass)
                || s.verdict_kepler_dram.as_ref().is_some_and(|v| !v.pass)
        });
        if !kepler_failed {
            violations.push(format!("{id}: ratio model never failed the +/-5% verdict"));
        }
    }
    conclude(
        9,
        "noiseless runs: resource-centric passes +/-5% at every step, ratio model fails \
         at least once per test",
        violations,
    );
}

#[test]
fn criterion_10_determinism() {
    let scenario = scenario();
    let mut violations = Vec::new();
    for kind in [TestKind::T1, TestKind::T3] {
        let a = run_test(&scenario, kind, false).unwrap().report;
        let b = run_test(&scenario, kind, false).unwrap().report;
        if a != b {
            violations.push(format!("{}: reports differ across identical runs", kind.id()));
            continue;
        }
        let dir_a = std::env::temp_dir().join(format!("powerbench_det_a_{}", kind.id()));
        let dir_b = std::env::temp_dir().join(format!("powerbench_det_b_{}", kind.id()));
        let files_a = emit_report(&a, &dir_a).unwrap();
        let files_b = emit_report(&b, &dir_b).unwrap();
        for (fa, fb) in files_a.iter().zip(&files_b) {
            let ba = std::fs::read(fa).unwrap();
            let bb = std::fs::read(fb).unwrap();
            if ba != bb {
                violations.push(format!("{}: bytes differ", fa.display()));
            }
        }
        if series_csv(&a) != series_csv(&b) || render_svg(&a) != render_svg(&b) {
            violations.push(format!("{}: rendered artifacts differ", kind.id()));
        }
        let _ = std::fs::remove_dir_all(dir_a);
        let _ = std::fs::remove_dir_all(dir_b);
    }
    conclude(
        10,
        "identical scenario and seed produce byte-identical JSON/CSV/SVG",
        violations,
    );
}
