//! Workload models: the closed-loop stressor web service, constant-usage
//! monitoring containers, native co-runners and background processes, and
//! short-lived batch jobs.
//!
//! The stressor executes a fixed number of giga-cycles per request and
//! pays a fixed non-compute overhead (dispatch, HTTP round trip) between
//! requests. Requests are strictly sequential, so per-tick utilization is
//! the compute fraction of one request cycle and falls as frequency rises.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::simnode::{CoreId, NodeState};
use crate::telemetry::UsageSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    CpuBound,
    MemoryBound,
    Mixed,
}

/// Demand model of one request-driven workload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Work per request, giga-cycles.
    pub cycles_per_request: f64,
    /// DRAM traffic while computing, GB/s.
    pub bandwidth_active_gbs: f64,
    /// Non-compute latency per request, seconds.
    pub overhead_per_request_s: f64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycles_per_request > 0.0) {
            return Err(Error::Invariant("workload: cycles_per_request must be > 0".into()));
        }
        if self.overhead_per_request_s < 0.0 {
            return Err(Error::Invariant("workload: overhead must be >= 0".into()));
        }
        match self.kind {
            WorkloadKind::CpuBound if self.bandwidth_active_gbs > 0.2 => Err(Error::Invariant(
                "workload: cpu_bound bandwidth must be <= 0.2 GB/s".into(),
            )),
            WorkloadKind::MemoryBound if self.bandwidth_active_gbs < 5.0 => Err(Error::Invariant(
                "workload: memory_bound bandwidth must be >= 5 GB/s".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QosClass {
    /// Exclusive pinned core + memory limit.
    Guaranteed,
    /// May share a core with other burstable containers.
    Burstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Active,
    Completed,
}

/// Placement and orchestration metadata of one container.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ContainerDeployment {
    pub container_id: String,
    pub namespace: String,
    pub pinned_core: CoreId,
    pub qos: QosClass,
    pub memory_limit_mb: u64,
    pub requested_cores: u64,
    pub lifecycle: Lifecycle,
}

impl ContainerDeployment {
    pub fn validate(&self) -> Result<()> {
        if self.qos == QosClass::Guaranteed && (self.requested_cores != 1 || self.memory_limit_mb == 0)
        {
            return Err(Error::Configuration(format!(
                "container {}: guaranteed QoS needs exactly one pinned core and a memory limit",
                self.container_id
            )));
        }
        Ok(())
    }
}

/// Closed-loop request plan: the next request is dispatched only after the
/// previous one completed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RequestSchedule {
    pub request_count: u32,
}

impl Default for RequestSchedule {
    fn default() -> Self {
        RequestSchedule { request_count: 100 }
    }
}

/// Compute time of one request at frequency `f`: fixed work over rate.
pub fn service_time(spec: &WorkloadSpec, f_ghz: f64) -> Result<f64> {
    if !(f_ghz > 0.0) {
        return Err(Error::InputDomain(format!("non-positive frequency {f_ghz}")));
    }
    Ok(spec.cycles_per_request / f_ghz)
}

/// Steady-state CPU fraction of the closed loop at frequency `f`:
/// `t_c / (t_c + overhead)`. With zero overhead the loop saturates at 1.
pub fn closed_loop_utilization(spec: &WorkloadSpec, f_ghz: f64) -> Result<f64> {
    let t_c = service_time(spec, f_ghz)?;
    Ok(t_c / (t_c + spec.overhead_per_request_s))
}

/// Wall-clock span of a full schedule at frequency `f`, in whole ticks.
pub fn load_duration_ticks(spec: &WorkloadSpec, f_ghz: f64, schedule: &RequestSchedule) -> Result<u64> {
    let t_c = service_time(spec, f_ghz)?;
    let total = schedule.request_count as f64 * (t_c + spec.overhead_per_request_s);
    Ok(total.ceil() as u64)
}

/// Solve (cycles_per_request, overhead) so the closed loop hits `u_low` at
/// `f_low` exactly and lands within 0.01 of `u_high` at `f_high`.
///
/// The loop has one shape parameter (the cycles/overhead ratio); overhead
/// is normalized to 1 s and cycles carries the ratio. The second band is a
/// feasibility check, not a second degree of freedom.
pub fn calibrate_work_overhead(
    u_low: f64,
    u_high: f64,
    f_low: f64,
    f_high: f64,
) -> Result<(f64, f64)> {
    if !(0.0 < u_high && u_high < u_low && u_low < 1.0) {
        return Err(Error::Calibration(format!(
            "need 0 < u_high < u_low < 1, got u_low={u_low}, u_high={u_high}"
        )));
    }
    if !(0.0 < f_low && f_low < f_high) {
        return Err(Error::Calibration(format!(
            "need 0 < f_low < f_high, got f_low={f_low}, f_high={f_high}"
        )));
    }
    let overhead = 1.0;
    // u(f) = c / (c + o*f)  =>  c = o * f * u / (1 - u)
    let cycles = overhead * f_low * u_low / (1.0 - u_low);
    if !(cycles > 0.0) {
        return Err(Error::Calibration("solved non-positive work per request".into()));
    }
    let achieved_high = cycles / (cycles + overhead * f_high);
    if (achieved_high - u_high).abs() > 0.01 {
        return Err(Error::Calibration(format!(
            "utilization band infeasible: u({f_high}) = {achieved_high:.4}, wanted {u_high} +/- 0.01"
        )));
    }
    Ok((cycles, overhead))
}

/// Everything that produces CPU time or DRAM traffic during a scenario.
#[derive(Debug, Clone, Default)]
pub struct WorkloadSet {
    pub deployments: BTreeMap<String, ContainerDeployment>,
    /// Constant per-tick CPU fraction of each monitoring container.
    pub monitor_usage: BTreeMap<String, f64>,
    /// Monitoring containers' DRAM traffic while busy, GB/s.
    pub monitor_bandwidth_active: f64,
    /// The container currently driven by the request loop, with its demand
    /// spec; `None` outside load phases.
    pub active_stressor: Option<(String, WorkloadSpec)>,
    /// Batch jobs currently executing CPU-bound work at full tilt.
    pub running_batch: Vec<String>,
}

impl WorkloadSet {
    /// Reject deployments that over-subscribe exclusive cores.
    pub fn validate(&self) -> Result<()> {
        let mut exclusive: BTreeMap<CoreId, &str> = BTreeMap::new();
        let mut shared: BTreeMap<CoreId, &str> = BTreeMap::new();
        for dep in self.deployments.values() {
            dep.validate()?;
            match dep.qos {
                QosClass::Guaranteed => {
                    if let Some(other) = exclusive.insert(dep.pinned_core, &dep.container_id) {
                        return Err(Error::Configuration(format!(
                            "containers {} and {} both pinned to core {}",
                            other, dep.container_id, dep.pinned_core
                        )));
                    }
                    if shared.contains_key(&dep.pinned_core) {
                        return Err(Error::Configuration(format!(
                            "guaranteed container {} shares core {} with a burstable one",
                            dep.container_id, dep.pinned_core
                        )));
                    }
                }
                QosClass::Burstable => {
                    shared.insert(dep.pinned_core, &dep.container_id);
                    if exclusive.contains_key(&dep.pinned_core) {
                        return Err(Error::Configuration(format!(
                            "burstable container {} overlaps exclusive core {}",
                            dep.container_id, dep.pinned_core
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-tick usage of every container, plus native processes already
    /// present in `state`. Also writes utilization, residency and bandwidth
    /// back into `state` so the power model sees the same tick.
    pub fn step_workloads(&self, state: &mut NodeState, tick: u64) -> Result<Vec<UsageSample>> {
        self.validate()?;
        let mut samples = Vec::new();
        let cstates = state.spec.cstates.clone();

        // Reset per-tick usage on all cores, then lay workloads back down.
        for core in &mut state.cores {
            core.utilization = 0.0;
        }
        state.container_bandwidth.clear();

        for dep in self.deployments.values() {
            let (fraction, bandwidth) = match dep.lifecycle {
                Lifecycle::Completed => (0.0, 0.0),
                Lifecycle::Active => {
                    if let Some((id, spec)) = &self.active_stressor {
                        if *id == dep.container_id {
                            let f = state.core(dep.pinned_core)?.frequency_ghz;
                            let u = closed_loop_utilization(spec, f)?;
                            // The idle gap between requests contributes no
                            // CPU time and no traffic.
                            (u, spec.bandwidth_active_gbs * u)
                        } else {
                            self.passive_usage(dep)
                        }
                    } else {
                        self.passive_usage(dep)
                    }
                }
            };
            let core = state.core_mut(dep.pinned_core)?;
            core.utilization += fraction;
            if core.utilization > 1.0 + 1e-9 {
                return Err(Error::Configuration(format!(
                    "core {} over-subscribed at tick {tick}",
                    dep.pinned_core
                )));
            }
            let f = core.frequency_ghz;
            state.pin_container(&dep.container_id, dep.pinned_core)?;
            state
                .container_bandwidth
                .insert(dep.container_id.clone(), bandwidth);
            samples.push(UsageSample {
                t: tick,
                container_id: dep.container_id.clone(),
                cpu_fraction: fraction,
                cycles: fraction * f,
                bandwidth_gbs: bandwidth,
                requested_cores: dep.requested_cores,
            });
        }

        for core in &mut state.cores {
            core.refresh_residency(&cstates);
        }
        Ok(samples)
    }

    fn passive_usage(&self, dep: &ContainerDeployment) -> (f64, f64) {
        if let Some(u) = self.monitor_usage.get(&dep.container_id) {
            (*u, self.monitor_bandwidth_active * u)
        } else if self.running_batch.iter().any(|b| b == &dep.container_id) {
            (1.0, 0.0)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Usage samples for native (non-container) processes: pinned co-runners
/// and the background load on the non-experimental socket. They are real
/// work to the meter and to process accounting, but carry no container
/// identity.
pub fn native_usage_samples(state: &NodeState, tick: u64) -> Vec<UsageSample> {
    state
        .cores
        .iter()
        .filter(|core| core.pinned_container.is_none() && core.utilization > 0.0)
        .map(|core| UsageSample {
            t: tick,
            container_id: format!("native:core{}", core.core_id),
            cpu_fraction: core.utilization,
            cycles: core.utilization * core.frequency_ghz,
            bandwidth_gbs: state.native_bandwidth.get(&core.core_id).copied().unwrap_or(0.0),
            requested_cores: 1,
        })
        .collect()
}
