//! Single-threaded discrete-time engine driving one validation scenario.
//!
//! Time advances in 1 s ticks. Each tick lays the workloads onto the
//! cores, evaluates the true power model per socket, and reads the noisy
//! meter. Phase helpers (settle / baseline / load) enforce the settle
//! discipline: nothing measured within 30 s of a configuration change
//! ever enters an aggregate.

use std::collections::BTreeMap;

use crate::attribution::{
    AttributionResult, CoreTelemetry, Estimator, EstimatorConfig, EstimatorMode, StaticPowerModel,
    WindowInputs,
};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::simnode::{
    apply_config, oracle_container_power, socket_power, ConfigChange, CoreId, NodeState,
};
use crate::telemetry::{sample_socket, GaussianStream, NoiseModel, PowerSample, UsageSample};
use crate::valframe::{clean_outliers, mean, sample_std, BaselineStats};
use crate::workloads::{
    load_duration_ticks, ContainerDeployment, Lifecycle, QosClass, WorkloadSet, WorkloadSpec,
};

pub const STRESSOR_ID: &str = "stressor";

/// Everything collected over one measured phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseData {
    /// Noisy validator meter, socket 0 (the experimental socket).
    pub sock_pkg: Vec<f64>,
    pub sock_dram: Vec<f64>,
    /// Noisy node meter (all sockets summed); the estimator's input.
    pub node_pkg: Vec<f64>,
    pub node_dram: Vec<f64>,
    /// Stressor truth from the oracle.
    pub oracle_pkg: Vec<f64>,
    pub oracle_dram: Vec<f64>,
    /// Host-core and whole-socket DRAM traffic on socket 0, GB/s.
    pub host_bw: Vec<f64>,
    pub socket_bw: Vec<f64>,
    /// Per-tick usage of every tracked entity (containers + native).
    pub usages: Vec<Vec<UsageSample>>,
    /// Per-tick power-management telemetry of every core.
    pub cores: Vec<Vec<CoreTelemetry>>,
}

pub struct Engine {
    pub scenario: ScenarioConfig,
    pub state: NodeState,
    pub workloads: WorkloadSet,
    noise: NoiseModel,
    meter_streams: Vec<GaussianStream>,
    tick: u64,
    last_change_tick: i64,
    /// Native per-core load applied after containers each tick.
    native: BTreeMap<CoreId, (f64, f64)>,
    corunner_cores: Vec<CoreId>,
    /// Raw dumps, populated when enabled.
    pub raw_power: Vec<PowerSample>,
    pub raw_usage: Vec<UsageSample>,
    pub collect_raw: bool,
}

impl Engine {
    /// Build the testbed for one test run. `stream_label` isolates the
    /// noise streams of independent tests from one another.
    pub fn new(scenario: &ScenarioConfig, stream_label: &str) -> Result<Self> {
        scenario.validate()?;
        let mut state = NodeState::new(scenario.socket.clone(), scenario.socket_count)?;

        // All socket-0 cores at f_max, C-states off: the fixed defaults.
        for core in &mut state.cores {
            core.frequency_ghz = scenario.socket.dvfs.f_max_ghz;
            core.cstates_enabled = false;
        }

        let mut workloads = WorkloadSet {
            monitor_bandwidth_active: scenario.monitor_bandwidth_gbs,
            ..WorkloadSet::default()
        };
        for (name, usage) in scenario.resolved_monitor_usage() {
            workloads.deployments.insert(
                name.clone(),
                ContainerDeployment {
                    container_id: name.clone(),
                    namespace: "monitoring".into(),
                    pinned_core: scenario.monitor_core,
                    qos: QosClass::Burstable,
                    memory_limit_mb: 512,
                    requested_cores: 1,
                    lifecycle: Lifecycle::Active,
                },
            );
            workloads.monitor_usage.insert(name, usage);
        }
        workloads.deployments.insert(
            STRESSOR_ID.into(),
            ContainerDeployment {
                container_id: STRESSOR_ID.into(),
                namespace: "bench".into(),
                pinned_core: scenario.host_core,
                qos: QosClass::Guaranteed,
                memory_limit_mb: 2048,
                requested_cores: 1,
                lifecycle: Lifecycle::Active,
            },
        );

        // Constant background on the non-experimental socket.
        let mut native = BTreeMap::new();
        let bg = &scenario.background;
        if bg.cores > 0 {
            let per_core_bw = bg.bandwidth_gbs / bg.cores as f64;
            for i in 0..bg.cores {
                let core_id = scenario.socket.core_count + i;
                native.insert(core_id, (bg.utilization, per_core_bw));
            }
        }

        let meter_streams = (0..scenario.socket_count)
            .map(|s| {
                GaussianStream::for_stream(
                    scenario.seed,
                    &format!("meter/{stream_label}/socket{s}"),
                )
            })
            .collect();

        Ok(Engine {
            noise: NoiseModel { relative_sigma: scenario.relative_sigma, seed: scenario.seed },
            scenario: scenario.clone(),
            state,
            workloads,
            meter_streams,
            tick: 0,
            last_change_tick: -1,
            native,
            corunner_cores: Vec::new(),
            raw_power: Vec::new(),
            raw_usage: Vec::new(),
            collect_raw: false,
        })
    }

    pub fn tick_now(&self) -> u64 {
        self.tick
    }

    fn mark_change(&mut self) {
        self.last_change_tick = self.tick as i64;
    }

    fn assert_settled(&self, phase: &str) -> Result<()> {
        let since = self.tick as i64 - self.last_change_tick;
        if self.last_change_tick >= 0 && since < self.scenario.durations.settle_s as i64 {
            return Err(Error::Invariant(format!(
                "{phase} began {since} s after a configuration change; settle discipline \
                 requires {}",
                self.scenario.durations.settle_s
            )));
        }
        Ok(())
    }

    /// Set one core's frequency.
    pub fn set_core_frequency(&mut self, core_id: CoreId, f_ghz: f64) -> Result<()> {
        self.state = apply_config(&self.state, &ConfigChange::CoreFrequency { core_id, f_ghz })?;
        self.mark_change();
        Ok(())
    }

    /// Enable or disable C-states on every socket-0 core except the host,
    /// which stays locked in C0.
    pub fn set_cstates_except_host(&mut self, enabled: bool) -> Result<()> {
        let host = self.scenario.host_core;
        for core_id in 0..self.scenario.socket.core_count {
            if core_id == host {
                continue;
            }
            self.state = apply_config(&self.state, &ConfigChange::CStates { core_id, enabled })?;
        }
        self.mark_change();
        Ok(())
    }

    /// Launch co-runners until `count` of them run, each pinned to its own
    /// free socket-0 core (1000 MB cap, full-tilt CPU-bound, no traffic).
    pub fn set_corunner_count(&mut self, count: usize) -> Result<()> {
        if count < self.corunner_cores.len() {
            return Err(Error::Configuration(
                "co-runners persist for their window; cannot scale down".into(),
            ));
        }
        let occupied: Vec<CoreId> = self
            .workloads
            .deployments
            .values()
            .map(|d| d.pinned_core)
            .chain(self.corunner_cores.iter().copied())
            .collect();
        let mut free: Vec<CoreId> = (0..self.scenario.socket.core_count)
            .filter(|c| !occupied.contains(c))
            .collect();
        let needed = count - self.corunner_cores.len();
        if free.len() < needed {
            return Err(Error::Configuration(format!(
                "need {needed} free cores for co-runners, only {} available",
                free.len()
            )));
        }
        for core_id in free.drain(..needed) {
            self.native.insert(core_id, (1.0, 0.0));
            self.corunner_cores.push(core_id);
        }
        if needed > 0 {
            self.mark_change();
        }
        Ok(())
    }

    /// Deploy `count` batch jobs pinned to distinct free cores.
    pub fn deploy_batch_jobs(&mut self, count: usize) -> Result<Vec<String>> {
        let occupied: Vec<CoreId> =
            self.workloads.deployments.values().map(|d| d.pinned_core).collect();
        let free: Vec<CoreId> = (0..self.scenario.socket.core_count)
            .filter(|c| !occupied.contains(c))
            .collect();
        if free.len() < count {
            return Err(Error::Configuration(format!(
                "need {count} free cores for batch jobs, only {} available",
                free.len()
            )));
        }
        let mut ids = Vec::new();
        for (i, core) in free.into_iter().take(count).enumerate() {
            let id = format!("batch-{i}");
            self.workloads.deployments.insert(
                id.clone(),
                ContainerDeployment {
                    container_id: id.clone(),
                    namespace: "idle_ns".into(),
                    pinned_core: core,
                    qos: QosClass::Guaranteed,
                    memory_limit_mb: 1000,
                    requested_cores: 1,
                    lifecycle: Lifecycle::Active,
                },
            );
            self.workloads.running_batch.push(id.clone());
            ids.push(id);
        }
        self.mark_change();
        Ok(ids)
    }

    /// Flip the given batch jobs to the completed lifecycle.
    pub fn complete_batch_jobs(&mut self, ids: &[String]) -> Result<()> {
        for id in ids {
            let dep = self
                .workloads
                .deployments
                .get_mut(id)
                .ok_or_else(|| Error::Lookup(format!("unknown batch job {id}")))?;
            dep.lifecycle = Lifecycle::Completed;
        }
        self.workloads.running_batch.retain(|b| !ids.contains(b));
        self.mark_change();
        Ok(())
    }

    /// One tick: workloads -> true power -> noisy meter.
    fn advance(&mut self, collect: Option<&mut PhaseData>) -> Result<()> {
        let tick = self.tick;
        let mut usages = self.workloads.step_workloads(&mut self.state, tick)?;

        // Native load goes on after containers; those cores must be free.
        self.state.native_bandwidth.clear();
        let cstates = self.state.spec.cstates.clone();
        for (&core_id, &(util, bw)) in &self.native {
            let core = self.state.core_mut(core_id)?;
            if core.utilization > 0.0 {
                return Err(Error::Configuration(format!(
                    "native process collides with a container on core {core_id}"
                )));
            }
            core.utilization = util;
            self.state.native_bandwidth.insert(core_id, bw);
        }
        for core in &mut self.state.cores {
            core.refresh_residency(&cstates);
        }
        usages.extend(crate::workloads::native_usage_samples(&self.state, tick));

        let mut node_pkg = 0.0;
        let mut node_dram = 0.0;
        let mut sock0 = None;
        for socket_id in 0..self.state.socket_count {
            let breakdown = socket_power(&self.state, socket_id)?;
            let sample =
                sample_socket(&breakdown, &self.noise, &mut self.meter_streams[socket_id], tick);
            node_pkg += sample.pkg_w;
            node_dram += sample.dram_w;
            if socket_id == 0 {
                sock0 = Some((sample.pkg_w, sample.dram_w));
            }
            if self.collect_raw {
                self.raw_power.push(sample);
            }
        }
        if self.collect_raw {
            self.raw_usage.extend(usages.iter().cloned());
        }

        if let Some(data) = collect {
            let (s_pkg, s_dram) = sock0.expect("socket 0 sampled");
            data.sock_pkg.push(s_pkg);
            data.sock_dram.push(s_dram);
            data.node_pkg.push(node_pkg);
            data.node_dram.push(node_dram);
            let (o_pkg, o_dram) = oracle_container_power(&self.state, STRESSOR_ID)?;
            data.oracle_pkg.push(o_pkg);
            data.oracle_dram.push(o_dram);
            data.host_bw.push(
                self.state
                    .container_bandwidth
                    .get(STRESSOR_ID)
                    .copied()
                    .unwrap_or(0.0),
            );
            data.socket_bw.push(self.state.socket_bandwidth(0));
            data.cores.push(self.core_telemetry());
            data.usages.push(usages);
        }

        self.tick += 1;
        Ok(())
    }

    fn core_telemetry(&self) -> Vec<CoreTelemetry> {
        let per_core_container_bw: BTreeMap<CoreId, f64> = {
            let mut m = BTreeMap::new();
            for (id, bw) in &self.state.container_bandwidth {
                if let Some(core) = self.state.container_core.get(id) {
                    *m.entry(*core).or_insert(0.0) += bw;
                }
            }
            m
        };
        self.state
            .cores
            .iter()
            .map(|c| CoreTelemetry {
                core_id: c.core_id,
                socket_id: c.socket_id,
                frequency_ghz: c.frequency_ghz,
                utilization: c.utilization,
                residency: c.residency.clone(),
                bandwidth_gbs: per_core_container_bw.get(&c.core_id).copied().unwrap_or(0.0)
                    + self.state.native_bandwidth.get(&c.core_id).copied().unwrap_or(0.0),
            })
            .collect()
    }

    /// Run `n` unmeasured ticks.
    pub fn settle(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.advance(None)?;
        }
        Ok(())
    }

    /// Record a quiescent baseline of `duration` ticks. The stressor must
    /// be idle; co-runners for the current step keep running.
    pub fn measure_baseline(&mut self, duration: u64) -> Result<(BaselineStats, PhaseData)> {
        if self.workloads.active_stressor.is_some() {
            return Err(Error::Invariant("baseline with an active stressor".into()));
        }
        self.assert_settled("baseline")?;
        let mut data = PhaseData::default();
        for _ in 0..duration {
            self.advance(Some(&mut data))?;
        }
        let stats = BaselineStats {
            duration_s: duration,
            mean_pkg_w: mean(&data.sock_pkg),
            mean_dram_w: mean(&data.sock_dram),
            sigma_pkg_w: sample_std(&data.sock_pkg),
            sigma_dram_w: sample_std(&data.sock_dram),
        };
        if stats.sigma_pkg_w / stats.mean_pkg_w > 0.01
            || stats.sigma_dram_w / stats.mean_dram_w > 0.01
        {
            return Err(Error::BaselineRejected(format!(
                "baseline CV above 1%: pkg {:.4}%, dram {:.4}%",
                100.0 * stats.sigma_pkg_w / stats.mean_pkg_w,
                100.0 * stats.sigma_dram_w / stats.mean_dram_w,
            )));
        }
        Ok((stats, data))
    }

    /// Drive the full request schedule against the stressor and measure.
    pub fn run_load(&mut self, spec: &WorkloadSpec) -> Result<PhaseData> {
        self.assert_settled("load")?;
        let f_host = self.state.core(self.scenario.host_core)?.frequency_ghz;
        let ticks = load_duration_ticks(spec, f_host, &self.scenario.request_schedule())?;
        self.workloads.active_stressor = Some((STRESSOR_ID.into(), spec.clone()));
        let mut data = PhaseData::default();
        for _ in 0..ticks {
            self.advance(Some(&mut data))?;
        }
        self.workloads.active_stressor = None;
        Ok(data)
    }

    /// Record `n` measured ticks without driving the stressor.
    pub fn observe(&mut self, n: u64, data: &mut PhaseData) -> Result<()> {
        self.assert_settled("observation")?;
        for _ in 0..n {
            self.advance(Some(data))?;
        }
        Ok(())
    }

    /// The node-scope baseline the estimators initialize from.
    pub fn node_baseline(&self, data: &PhaseData) -> (f64, f64) {
        (mean(&data.node_pkg), mean(&data.node_dram))
    }

    /// Build both estimators from the startup baseline.
    pub fn init_estimators(
        &self,
        startup: &PhaseData,
    ) -> Result<(Estimator, Estimator)> {
        let (node_pkg, node_dram) = self.node_baseline(startup);
        let settings = &self.scenario.estimator;
        let kepler = Estimator::initialize(
            EstimatorConfig {
                mode: EstimatorMode::KeplerRatio,
                idle_underestimate_beta_pkg: settings.beta_pkg,
                idle_underestimate_beta_dram: settings.beta_dram,
                window_s: settings.window_s,
                total_cores: settings.total_cores,
            },
            node_pkg,
            node_dram,
            None,
        )?;
        let spec = &self.scenario.socket;
        let resource_centric = Estimator::initialize(
            EstimatorConfig {
                mode: EstimatorMode::ResourceCentric,
                idle_underestimate_beta_pkg: 1.0,
                idle_underestimate_beta_dram: 1.0,
                window_s: settings.window_s,
                total_cores: settings.total_cores,
            },
            node_pkg,
            node_dram,
            Some(StaticPowerModel {
                static_per_core_c0: spec.static_per_core_c0,
                leak_factor: spec.cstates.leak_factor.clone(),
                uncore_power: spec.uncore_power,
                dram_static: spec.dram_static,
                socket_count: self.scenario.socket_count,
                dvfs: spec.dvfs.clone(),
            }),
        )?;
        Ok((kepler, resource_centric))
    }

    /// Evaluate an estimator over every complete window of a load phase.
    pub fn estimate_windows(
        &self,
        estimator: &Estimator,
        data: &PhaseData,
    ) -> Result<Vec<AttributionResult>> {
        let w = estimator.config.window_s as usize;
        let n_windows = data.node_pkg.len() / w;
        let mut results = Vec::with_capacity(n_windows);
        for i in 0..n_windows {
            let range = i * w..(i + 1) * w;
            let meter_pkg = mean(&data.node_pkg[range.clone()]);
            let meter_dram = mean(&data.node_dram[range.clone()]);
            let usages = window_mean_usages(&data.usages[range.clone()]);
            let cores = window_mean_cores(&data.cores[range.clone()]);
            let result = estimator.estimate(&WindowInputs {
                meter_pkg_w: meter_pkg,
                meter_dram_w: meter_dram,
                usages: &usages,
                deployments: &self.workloads.deployments,
                cores: &cores,
            })?;
            // Conservation is a hard invariant of the ratio model: what is
            // split must equal the pool, every window, both domains.
            let (dyn_pkg, dyn_dram) = result.attributed_dyn_sums();
            if (dyn_pkg - result.node_dyn_pkg).abs() > 1e-9
                || (dyn_dram - result.node_dyn_dram).abs() > 1e-9
            {
                return Err(Error::Invariant(format!(
                    "window {i}: attributed dynamic power does not sum to the pool"
                )));
            }
            results.push(result);
        }
        Ok(results)
    }

    /// Cleaned validator series for a phase, with the kept-sample count.
    pub fn cleaned_validator_series(data: &PhaseData) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((clean_outliers(&data.sock_pkg)?, clean_outliers(&data.sock_dram)?))
    }
}

/// Window means of usage samples, grouped by entity.
pub fn window_mean_usages(ticks: &[Vec<UsageSample>]) -> Vec<UsageSample> {
    let mut acc: BTreeMap<String, (f64, f64, f64, u64)> = BTreeMap::new();
    for tick in ticks {
        for u in tick {
            let e = acc.entry(u.container_id.clone()).or_insert((0.0, 0.0, 0.0, u.requested_cores));
            e.0 += u.cpu_fraction;
            e.1 += u.cycles;
            e.2 += u.bandwidth_gbs;
        }
    }
    let n = ticks.len() as f64;
    acc.into_iter()
        .map(|(id, (fraction, cycles, bw, requested))| UsageSample {
            t: 0,
            container_id: id,
            cpu_fraction: fraction / n,
            cycles: cycles / n,
            bandwidth_gbs: bw / n,
            requested_cores: requested,
        })
        .collect()
}

/// Window means of core telemetry, keyed by core id.
pub fn window_mean_cores(ticks: &[Vec<CoreTelemetry>]) -> Vec<CoreTelemetry> {
    if ticks.is_empty() {
        return Vec::new();
    }
    let n = ticks.len() as f64;
    let mut out: Vec<CoreTelemetry> = ticks[0].clone();
    for c in &mut out {
        c.utilization = 0.0;
        c.bandwidth_gbs = 0.0;
        c.residency.iter_mut().for_each(|r| *r = 0.0);
    }
    for tick in ticks {
        for (agg, c) in out.iter_mut().zip(tick.iter()) {
            agg.utilization += c.utilization;
            agg.bandwidth_gbs += c.bandwidth_gbs;
            for (a, r) in agg.residency.iter_mut().zip(c.residency.iter()) {
                *a += r;
            }
        }
    }
    for c in &mut out {
        c.utilization /= n;
        c.bandwidth_gbs /= n;
        c.residency.iter_mut().for_each(|r| *r /= n);
    }
    out
}
