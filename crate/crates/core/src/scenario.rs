//! Scenario configuration: the single JSON document that pins hardware
//! constants, workloads, isolation flags, estimator knobs and the seed.
//!
//! Everything stochastic in a run is a pure function of this file plus the
//! seed; environment variables are never consulted.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simnode::{CStateModel, CoreId, DvfsModel, SocketSpec};
use crate::telemetry::GaussianStream;
use crate::workloads::{RequestSchedule, WorkloadKind, WorkloadSpec};

pub const SCHEMA_VERSION: u32 = 1;

/// Isolation settings of the testbed. Values other than the fixed
/// defaults are rejected; only the test runners themselves may vary
/// frequency and C-states, step by step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IsolationFlags {
    pub turbo: String,
    pub hyperthreading: String,
    pub cstates: String,
    pub governor: String,
    pub uncore: String,
    pub swap: String,
}

impl Default for IsolationFlags {
    fn default() -> Self {
        IsolationFlags {
            turbo: "off".into(),
            hyperthreading: "off".into(),
            cstates: "off".into(),
            governor: "userspace".into(),
            uncore: "fixed".into(),
            swap: "off".into(),
        }
    }
}

impl IsolationFlags {
    pub fn validate(&self) -> Result<()> {
        let want = IsolationFlags::default();
        if self != &want {
            return Err(Error::Configuration(format!(
                "isolation flags must match the fixed testbed defaults {want:?}, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One monitoring container. Usage is a constant CPU fraction; when not
/// pinned in the file it is drawn once from `monitor_usage_range` using
/// the scenario seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MonitorSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<f64>,
}

/// Constant native load on the non-experimental socket (OS, control
/// plane). Tracked by process accounting like any other work.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackgroundLoad {
    pub cores: usize,
    pub utilization: f64,
    pub bandwidth_gbs: f64,
}

/// Batch-job plan for the completed-pod check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BatchPlan {
    pub count: usize,
    pub runtime_s: u64,
}

/// Phase durations shared by the validation tests.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Durations {
    pub baseline_s: u64,
    pub settle_s: u64,
    pub request_count: u32,
}

impl Default for Durations {
    fn default() -> Self {
        Durations { baseline_s: 120, settle_s: 30, request_count: 100 }
    }
}

/// Estimator knobs as stored in the scenario file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimatorSettings {
    pub beta_pkg: f64,
    pub beta_dram: f64,
    pub window_s: u64,
    pub total_cores: u64,
}

/// Bands achieved by the calibration that produced this scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct CalibrationRecord {
    /// band name -> (achieved value, human-readable band).
    pub achieved: std::collections::BTreeMap<String, (f64, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub relative_sigma: f64,
    /// Accuracy margin for pass/fail verdicts.
    pub margin: f64,
    pub durations: Durations,
    pub socket: SocketSpec,
    pub socket_count: usize,
    pub host_core: CoreId,
    pub monitor_core: CoreId,
    pub monitors: Vec<MonitorSpec>,
    pub monitor_usage_range: (f64, f64),
    pub monitor_bandwidth_gbs: f64,
    pub background: BackgroundLoad,
    pub stressor_cpu: WorkloadSpec,
    pub stressor_memory: WorkloadSpec,
    pub corunner_counts: Vec<usize>,
    pub batch: BatchPlan,
    pub estimator: EstimatorSettings,
    pub isolation: IsolationFlags,
    #[serde(default)]
    pub calibration: CalibrationRecord,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Configuration(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        let scenario: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Configuration(format!("scenario does not parse: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Configuration(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.socket.validate()?;
        self.isolation.validate()?;
        self.stressor_cpu.validate()?;
        self.stressor_memory.validate()?;
        if self.socket_count < 2 {
            return Err(Error::Configuration(
                "testbed isolation needs two sockets (experimental + system)".into(),
            ));
        }
        if self.host_core >= self.socket.core_count || self.monitor_core >= self.socket.core_count {
            return Err(Error::Configuration(
                "host and monitor cores must live on socket 0".into(),
            ));
        }
        if self.host_core == self.monitor_core {
            return Err(Error::Configuration("host core must not host monitors".into()));
        }
        if self.background.cores > self.socket.core_count {
            return Err(Error::Configuration("background load exceeds socket 1".into()));
        }
        if !(0.0..=1.0).contains(&self.background.utilization) {
            return Err(Error::Configuration("background utilization outside [0,1]".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Configuration("margin must be > 0".into()));
        }
        if self.durations.baseline_s < 30 {
            return Err(Error::Configuration("baseline must cover at least 30 s".into()));
        }
        let free = self.socket.core_count - 2; // host + monitor core
        if let Some(&k) = self.corunner_counts.iter().max() {
            if k > free {
                return Err(Error::Configuration(format!(
                    "{k} co-runners cannot be pinned to {free} free cores"
                )));
            }
        }
        if self.batch.count > free {
            return Err(Error::Configuration(format!(
                "{} batch jobs cannot be pinned to {free} free cores",
                self.batch.count
            )));
        }
        for m in &self.monitors {
            if let Some(u) = m.usage {
                if !(u >= self.monitor_usage_range.0 && u <= self.monitor_usage_range.1) {
                    return Err(Error::Configuration(format!(
                        "monitor {} usage {u} outside the configured range",
                        m.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Monitor usages with unset values drawn once from the seed.
    pub fn resolved_monitor_usage(&self) -> Vec<(String, f64)> {
        self.monitors
            .iter()
            .map(|m| {
                let usage = m.usage.unwrap_or_else(|| {
                    let mut stream =
                        GaussianStream::for_stream(self.seed, &format!("monitor_usage/{}", m.name));
                    let (lo, hi) = self.monitor_usage_range;
                    // Uniform draw via the erf-free route: fold a normal
                    // draw through its CDF-ish clamp is overkill; use the
                    // stream's uniform bits directly.
                    lo + (hi - lo) * stream.next_uniform_unit()
                });
                (m.name.clone(), usage)
            })
            .collect()
    }

    pub fn request_schedule(&self) -> RequestSchedule {
        RequestSchedule { request_count: self.durations.request_count }
    }

    /// Stable content hash of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        // FNV-1a, 64-bit; enough to identify a scenario file.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// Nominal calibrated socket: Xeon-Gold-6132-like geometry with constants
/// solved so the shipped validation bands hold. `powerbench calibrate`
/// regenerates all of these from targets.
pub fn default_socket_spec() -> SocketSpec {
    SocketSpec {
        core_count: 14,
        dvfs: DvfsModel {
            f_min_ghz: 1.0,
            f_max_ghz: 2.6,
            f_step_ghz: 0.2,
            v0_volts: 0.6,
            v_slope: 0.25,
            // Solved so the stressor's true dynamic power at f_max under
            // the closed loop (u = 2.125/4.725) is exactly 2.6 W.
            k_cap: 4.725 / 2.125,
        },
        cstates: CStateModel {
            states: vec!["C0".into(), "C1".into(), "C3".into(), "C6".into()],
            leak_factor: vec![1.0, 0.55, 0.25, 0.05],
            idle_residency: vec![0.1, 0.2, 0.7],
        },
        static_per_core_c0: 3.4928,
        uncore_freq_ghz: 2.4,
        uncore_power: 12.0,
        dram_static: 2.45,
        dram_bw_coeff: 0.5,
    }
}

/// Nominal full scenario mirroring the shipped `scenarios/default.json`.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: "default".into(),
        description: "Calibrated two-socket testbed with CPU/memory stressors, \
                      monitoring containers and native co-runners"
            .into(),
        seed: 42,
        relative_sigma: 0.002,
        margin: 0.05,
        durations: Durations::default(),
        socket: default_socket_spec(),
        socket_count: 2,
        host_core: 1,
        monitor_core: 13,
        monitors: vec![
            MonitorSpec { name: "kepler".into(), usage: None },
            MonitorSpec { name: "prometheus".into(), usage: None },
            MonitorSpec { name: "grafana".into(), usage: None },
        ],
        monitor_usage_range: (0.02, 0.05),
        monitor_bandwidth_gbs: 0.01,
        background: BackgroundLoad { cores: 8, utilization: 0.75, bandwidth_gbs: 0.2 },
        stressor_cpu: WorkloadSpec {
            kind: WorkloadKind::CpuBound,
            cycles_per_request: 2.125,
            bandwidth_active_gbs: 0.1,
            overhead_per_request_s: 1.0,
        },
        stressor_memory: WorkloadSpec {
            kind: WorkloadKind::MemoryBound,
            cycles_per_request: 2.125,
            bandwidth_active_gbs: 10.0,
            overhead_per_request_s: 1.0,
        },
        corunner_counts: vec![0, 2, 4, 6, 8, 10, 12],
        batch: BatchPlan { count: 12, runtime_s: 120 },
        estimator: EstimatorSettings {
            beta_pkg: 0.5194,
            beta_dram: 0.2,
            window_s: 30,
            total_cores: 28,
        },
        isolation: IsolationFlags::default(),
        calibration: CalibrationRecord::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_validates() {
        default_scenario().validate().unwrap();
    }

    #[test]
    fn monitor_draws_are_deterministic_and_in_range() {
        let s = default_scenario();
        let a = s.resolved_monitor_usage();
        let b = s.resolved_monitor_usage();
        assert_eq!(a, b);
        for (_, u) in &a {
            assert!((0.02..=0.05).contains(u), "usage {u}");
        }
        let mut other = s.clone();
        other.seed = 43;
        assert_ne!(a, other.resolved_monitor_usage());
    }

    #[test]
    fn isolation_flags_are_pinned() {
        let mut s = default_scenario();
        s.isolation.turbo = "on".into();
        assert!(matches!(s.validate(), Err(Error::Configuration(_))));
    }

    #[test]
    fn capacity_limits_are_enforced() {
        let mut s = default_scenario();
        s.corunner_counts = vec![0, 13];
        assert!(matches!(s.validate(), Err(Error::Configuration(_))));

        // Twelve co-runners plus the host fit on a 14-core socket.
        let s = default_scenario();
        let (corunners, host) = (12, 1);
        assert!(corunners + host <= s.socket.core_count);
        s.validate().unwrap();
    }

    #[test]
    fn scenario_roundtrips_through_json() {
        let s = default_scenario();
        let text = serde_json::to_string(&s).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
