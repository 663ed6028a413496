//! Container-level power estimators.
//!
//! Two modes share one pipeline (split node power into idle and dynamic,
//! allocate idle by reserved cores, allocate dynamic by a usage weight):
//!
//! * `kepler_ratio` is the model under test. Idle is a fixed estimate taken
//!   once at startup and never updated; dynamic power is spread over every
//!   tracked workload proportionally to CPU-time fraction, for the DRAM
//!   domain too. Native processes (co-runners, OS background) are tracked
//!   and dilute the pool, but their share is reported under the
//!   `system_processes` pseudo-container rather than as containers.
//! * `resource_centric` is the corrected model: PKG shares are weighted by
//!   voltage-and-frequency-weighted executed cycles, DRAM shares by memory
//!   bandwidth, and the idle estimate is recomputed every window from
//!   per-core C-state residency.
//!
//! Estimators see meter totals, usage counters and power-management state
//! (frequencies, residencies), never the simulator's per-core truth.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::simnode::{CoreId, DvfsModel, SocketId};
use crate::telemetry::UsageSample;
use crate::workloads::{ContainerDeployment, Lifecycle};

/// Reported bucket for tracked non-container processes.
pub const SYSTEM_ID: &str = "system_processes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    KeplerRatio,
    ResourceCentric,
}

/// Static knobs of an estimator instance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    /// Fraction of the startup baseline booked as fixed idle, PKG domain.
    pub idle_underestimate_beta_pkg: f64,
    /// Same for the DRAM domain.
    pub idle_underestimate_beta_dram: f64,
    /// Evaluation window, seconds.
    pub window_s: u64,
    /// Cores the idle pool is spread over (GHG-style reservation base).
    pub total_cores: u64,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, beta) in [
            ("beta_pkg", self.idle_underestimate_beta_pkg),
            ("beta_dram", self.idle_underestimate_beta_dram),
        ] {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::Configuration(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.window_s < 1 {
            return Err(Error::Configuration("window must be >= 1 s".into()));
        }
        if self.total_cores == 0 {
            return Err(Error::Configuration("total_cores must be > 0".into()));
        }
        Ok(())
    }
}

/// Observable power-management state of one core over a window: what a
/// real agent reads from sysfs and uncore counters, not the power truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoreTelemetry {
    pub core_id: CoreId,
    pub socket_id: SocketId,
    pub frequency_ghz: f64,
    pub utilization: f64,
    pub residency: Vec<f64>,
    pub bandwidth_gbs: f64,
}

/// Calibrated hardware constants granted to the resource-centric model so
/// it can reconstruct static power from observable residency. The ratio
/// model deliberately has no such input.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StaticPowerModel {
    pub static_per_core_c0: f64,
    pub leak_factor: Vec<f64>,
    pub uncore_power: f64,
    pub dram_static: f64,
    pub socket_count: usize,
    pub dvfs: DvfsModel,
}

impl StaticPowerModel {
    /// Reconstructed node static PKG power from per-core residency.
    pub fn node_static_pkg(&self, cores: &[CoreTelemetry]) -> f64 {
        let leakage: f64 = cores
            .iter()
            .map(|c| {
                let weighted: f64 = c
                    .residency
                    .iter()
                    .zip(self.leak_factor.iter())
                    .map(|(r, l)| r * l)
                    .sum();
                self.static_per_core_c0 * weighted
            })
            .sum();
        leakage + self.socket_count as f64 * self.uncore_power
    }

    pub fn node_static_dram(&self) -> f64 {
        self.socket_count as f64 * self.dram_static
    }
}

/// Idle and dynamic watts attributed to one entity, both domains.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct EntityPower {
    pub idle_pkg: f64,
    pub dyn_pkg: f64,
    pub idle_dram: f64,
    pub dyn_dram: f64,
}

/// Attribution of one window.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttributionResult {
    /// Containers plus the `system_processes` bucket.
    pub entries: BTreeMap<String, EntityPower>,
    pub node_idle_pkg: f64,
    pub node_dyn_pkg: f64,
    pub node_idle_dram: f64,
    pub node_dyn_dram: f64,
}

impl AttributionResult {
    pub fn entry(&self, id: &str) -> EntityPower {
        self.entries.get(id).copied().unwrap_or_default()
    }

    /// Sum of attributed dynamic power over every entry, per domain.
    pub fn attributed_dyn_sums(&self) -> (f64, f64) {
        let pkg = self.entries.values().map(|e| e.dyn_pkg).sum();
        let dram = self.entries.values().map(|e| e.dyn_dram).sum();
        (pkg, dram)
    }

    /// Sum of attributed idle power over every entry, per domain.
    pub fn attributed_idle_sums(&self) -> (f64, f64) {
        let pkg = self.entries.values().map(|e| e.idle_pkg).sum();
        let dram = self.entries.values().map(|e| e.idle_dram).sum();
        (pkg, dram)
    }
}

/// Split a node total into (idle, dynamic) against a fixed idle estimate.
/// Dynamic is clamped at zero when the total dips below the estimate.
pub fn split_node_power(total_w: f64, fixed_idle_w: f64) -> Result<(f64, f64)> {
    if total_w < 0.0 {
        return Err(Error::InputDomain(format!("negative node power {total_w}")));
    }
    let dynamic = (total_w - fixed_idle_w).max(0.0);
    let idle = total_w.min(fixed_idle_w);
    Ok((idle, dynamic))
}

/// GHG-style idle allocation: each active container receives
/// `node_idle * requested_cores / total_cores`. Completed containers get
/// nothing. The unreserved remainder belongs to the system bucket, so the
/// pool is conserved across the full result.
pub fn allocate_idle(
    deployments: &BTreeMap<String, ContainerDeployment>,
    node_idle_w: f64,
    total_cores: u64,
) -> Result<BTreeMap<String, f64>> {
    if total_cores == 0 {
        return Err(Error::Configuration("total_cores must be > 0".into()));
    }
    let reserved: u64 = deployments
        .values()
        .filter(|d| d.lifecycle == Lifecycle::Active)
        .map(|d| d.requested_cores)
        .sum();
    if reserved > total_cores {
        return Err(Error::Configuration(format!(
            "containers reserve {reserved} of {total_cores} cores"
        )));
    }
    let mut shares = BTreeMap::new();
    for dep in deployments.values() {
        let w = match dep.lifecycle {
            Lifecycle::Active => node_idle_w * dep.requested_cores as f64 / total_cores as f64,
            Lifecycle::Completed => 0.0,
        };
        shares.insert(dep.container_id.clone(), w);
    }
    Ok(shares)
}

/// Ratio-model dynamic allocation: each usage entry receives a share of
/// `node_dyn` proportional to its CPU-time fraction. The same weight is
/// used for the DRAM domain as well; that is the behaviour under test.
pub fn allocate_dynamic_ratio(
    usages: &[UsageSample],
    node_dyn_w: f64,
) -> Result<BTreeMap<String, f64>> {
    if node_dyn_w < 0.0 {
        return Err(Error::InputDomain(format!("negative dynamic pool {node_dyn_w}")));
    }
    let mut total = 0.0;
    for u in usages {
        if u.cpu_fraction < 0.0 {
            return Err(Error::InputDomain(format!(
                "negative usage for {}",
                u.container_id
            )));
        }
        total += u.cpu_fraction;
    }
    let mut shares = BTreeMap::new();
    for u in usages {
        let w = if total == 0.0 {
            0.0
        } else {
            node_dyn_w * u.cpu_fraction / total
        };
        *shares.entry(u.container_id.clone()).or_insert(0.0) += w;
    }
    Ok(shares)
}

/// Resource-centric dynamic allocation.
///
/// PKG weight of an entry is `V(f)^2 * f * u` of the core it runs on, a
/// direct proxy for switching power. DRAM weight is the entry's own memory
/// bandwidth. Tracked work that is not a container (difference between the
/// core totals and the container entries) lands in the system bucket.
pub fn allocate_dynamic_resource_centric(
    usages: &[UsageSample],
    node_dyn_pkg_w: f64,
    node_dyn_dram_w: f64,
    deployments: &BTreeMap<String, ContainerDeployment>,
    cores: &[CoreTelemetry],
    dvfs: &DvfsModel,
) -> Result<BTreeMap<String, EntityPower>> {
    let weight = |f_ghz: f64, u: f64| {
        let v = dvfs.voltage(f_ghz);
        v * v * f_ghz * u
    };
    let core_freq: BTreeMap<CoreId, f64> =
        cores.iter().map(|c| (c.core_id, c.frequency_ghz)).collect();

    let total_pkg_weight: f64 = cores.iter().map(|c| weight(c.frequency_ghz, c.utilization)).sum();
    let total_bw: f64 = cores.iter().map(|c| c.bandwidth_gbs).sum();

    let mut container_pkg_weight: BTreeMap<String, f64> = BTreeMap::new();
    let mut container_bw: BTreeMap<String, f64> = BTreeMap::new();
    for u in usages {
        let Some(dep) = deployments.get(&u.container_id) else {
            continue; // native entries are covered by the core totals
        };
        let f = core_freq.get(&dep.pinned_core).ok_or_else(|| {
            Error::Configuration(format!(
                "container {} pinned to core {} absent from telemetry",
                u.container_id, dep.pinned_core
            ))
        })?;
        *container_pkg_weight.entry(u.container_id.clone()).or_insert(0.0) +=
            weight(*f, u.cpu_fraction);
        *container_bw.entry(u.container_id.clone()).or_insert(0.0) += u.bandwidth_gbs;
    }

    let mut out: BTreeMap<String, EntityPower> = BTreeMap::new();
    let mut pkg_assigned = 0.0;
    let mut dram_assigned = 0.0;
    for (id, w) in &container_pkg_weight {
        let share = if total_pkg_weight == 0.0 {
            0.0
        } else {
            node_dyn_pkg_w * w / total_pkg_weight
        };
        pkg_assigned += share;
        out.entry(id.clone()).or_default().dyn_pkg = share;
    }
    for (id, bw) in &container_bw {
        let share = if total_bw == 0.0 { 0.0 } else { node_dyn_dram_w * bw / total_bw };
        dram_assigned += share;
        out.entry(id.clone()).or_default().dyn_dram = share;
    }
    let system = out.entry(SYSTEM_ID.to_string()).or_default();
    system.dyn_pkg = (node_dyn_pkg_w - pkg_assigned).max(0.0);
    system.dyn_dram = (node_dyn_dram_w - dram_assigned).max(0.0);
    Ok(out)
}

/// A configured estimator with its startup idle estimate resolved.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Estimator {
    pub config: EstimatorConfig,
    /// `beta_pkg * startup baseline`, never updated (kepler_ratio mode).
    pub fixed_idle_pkg: f64,
    pub fixed_idle_dram: f64,
    /// Present in resource_centric mode only.
    pub static_model: Option<StaticPowerModel>,
}

/// Window-mean inputs an estimator consumes.
#[derive(Debug, Clone)]
pub struct WindowInputs<'a> {
    pub meter_pkg_w: f64,
    pub meter_dram_w: f64,
    pub usages: &'a [UsageSample],
    pub deployments: &'a BTreeMap<String, ContainerDeployment>,
    pub cores: &'a [CoreTelemetry],
}

impl Estimator {
    /// Fix the idle estimate from the startup baseline (taken with
    /// C-states disabled), scaled by the configured betas.
    pub fn initialize(
        config: EstimatorConfig,
        startup_baseline_pkg_w: f64,
        startup_baseline_dram_w: f64,
        static_model: Option<StaticPowerModel>,
    ) -> Result<Self> {
        config.validate()?;
        if config.mode == EstimatorMode::ResourceCentric && static_model.is_none() {
            return Err(Error::Configuration(
                "resource_centric mode needs a static power model".into(),
            ));
        }
        Ok(Estimator {
            fixed_idle_pkg: config.idle_underestimate_beta_pkg * startup_baseline_pkg_w,
            fixed_idle_dram: config.idle_underestimate_beta_dram * startup_baseline_dram_w,
            config,
            static_model,
        })
    }

    /// Attribute one window.
    pub fn estimate(&self, window: &WindowInputs) -> Result<AttributionResult> {
        let (idle_pkg, idle_dram) = match self.config.mode {
            EstimatorMode::KeplerRatio => (self.fixed_idle_pkg, self.fixed_idle_dram),
            EstimatorMode::ResourceCentric => {
                let model = self.static_model.as_ref().expect("checked at initialize");
                (model.node_static_pkg(window.cores), model.node_static_dram())
            }
        };
        let (node_idle_pkg, node_dyn_pkg) = split_node_power(window.meter_pkg_w, idle_pkg)?;
        let (node_idle_dram, node_dyn_dram) = split_node_power(window.meter_dram_w, idle_dram)?;

        let idle_pkg_shares =
            allocate_idle(window.deployments, node_idle_pkg, self.config.total_cores)?;
        let idle_dram_shares =
            allocate_idle(window.deployments, node_idle_dram, self.config.total_cores)?;

        let mut entries: BTreeMap<String, EntityPower> = BTreeMap::new();
        match self.config.mode {
            EstimatorMode::KeplerRatio => {
                let pkg = allocate_dynamic_ratio(window.usages, node_dyn_pkg)?;
                let dram = allocate_dynamic_ratio(window.usages, node_dyn_dram)?;
                for (id, w) in pkg {
                    let key = self.reported_key(window, &id);
                    entries.entry(key).or_default().dyn_pkg += w;
                }
                for (id, w) in dram {
                    let key = self.reported_key(window, &id);
                    entries.entry(key).or_default().dyn_dram += w;
                }
            }
            EstimatorMode::ResourceCentric => {
                let model = self.static_model.as_ref().expect("checked at initialize");
                let shares = allocate_dynamic_resource_centric(
                    window.usages,
                    node_dyn_pkg,
                    node_dyn_dram,
                    window.deployments,
                    window.cores,
                    &model.dvfs,
                )?;
                for (id, p) in shares {
                    let e = entries.entry(id).or_default();
                    e.dyn_pkg += p.dyn_pkg;
                    e.dyn_dram += p.dyn_dram;
                }
            }
        }

        let mut assigned_idle_pkg = 0.0;
        let mut assigned_idle_dram = 0.0;
        for (id, w) in idle_pkg_shares {
            assigned_idle_pkg += w;
            entries.entry(id).or_default().idle_pkg = w;
        }
        for (id, w) in idle_dram_shares {
            assigned_idle_dram += w;
            entries.entry(id).or_default().idle_dram = w;
        }
        let system = entries.entry(SYSTEM_ID.to_string()).or_default();
        system.idle_pkg += node_idle_pkg - assigned_idle_pkg;
        system.idle_dram += node_idle_dram - assigned_idle_dram;

        Ok(AttributionResult {
            entries,
            node_idle_pkg,
            node_dyn_pkg,
            node_idle_dram,
            node_dyn_dram,
        })
    }

    fn reported_key(&self, window: &WindowInputs, usage_id: &str) -> String {
        if window.deployments.contains_key(usage_id) {
            usage_id.to_string()
        } else {
            SYSTEM_ID.to_string()
        }
    }
}
