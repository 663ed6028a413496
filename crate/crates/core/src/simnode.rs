//! Simulated multi-socket server power model and the per-container
//! ground-truth oracle.
//!
//! Package power of a socket decomposes into per-core dynamic power
//! (`k_cap * V(f)^2 * f * u`), per-core static power (leakage scaled by
//! C-state residency) and a constant uncore term. DRAM power is a static
//! floor plus a linear bandwidth term. The oracle reads a container's true
//! dynamic power straight off the core it is pinned to, which is exactly
//! the privileged information a real estimator never has.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub type CoreId = usize;
pub type SocketId = usize;

/// Tolerance for grid / residency checks.
const EPS: f64 = 1e-9;

/// Voltage-frequency model of one core family.
///
/// Voltage is linear in frequency: `V(f) = v0 + v_slope * (f - f_min)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DvfsModel {
    pub f_min_ghz: f64,
    pub f_max_ghz: f64,
    pub f_step_ghz: f64,
    /// Volts at `f_min`.
    pub v0_volts: f64,
    /// Volts per GHz above `f_min`.
    pub v_slope: f64,
    /// Effective switched capacitance, watts per (volt^2 * GHz).
    pub k_cap: f64,
}

impl DvfsModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min_ghz < self.f_max_ghz) {
            return Err(Error::Invariant("dvfs: f_min must be < f_max".into()));
        }
        if !(self.f_step_ghz > 0.0) {
            return Err(Error::Invariant("dvfs: f_step must be > 0".into()));
        }
        if !(self.v0_volts > 0.0 && self.v_slope > 0.0) {
            return Err(Error::Invariant(
                "dvfs: V(f) must be positive and strictly increasing".into(),
            ));
        }
        if !(self.k_cap > 0.0) {
            return Err(Error::Invariant("dvfs: k_cap must be > 0".into()));
        }
        Ok(())
    }

    /// Supply voltage at frequency `f`.
    pub fn voltage(&self, f_ghz: f64) -> f64 {
        self.v0_volts + self.v_slope * (f_ghz - self.f_min_ghz)
    }

    /// True if `f` lies on the DVFS grid within [`f_min`, `f_max`].
    pub fn on_grid(&self, f_ghz: f64) -> bool {
        if f_ghz < self.f_min_ghz - EPS || f_ghz > self.f_max_ghz + EPS {
            return false;
        }
        let steps = (f_ghz - self.f_min_ghz) / self.f_step_ghz;
        (steps - steps.round()).abs() < 1e-6
    }

    /// All grid frequencies from `f_min` to `f_max` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.f_max_ghz - self.f_min_ghz) / self.f_step_ghz).round() as usize;
        (0..=n)
            .map(|i| self.f_min_ghz + i as f64 * self.f_step_ghz)
            .collect()
    }
}

/// Hardware idle states and their leakage scaling.
///
/// `leak_factor[0]` is C0 and must be 1.0; deeper states must shrink
/// strictly. `idle_residency` is how a fully idle core splits its time
/// over the non-C0 states when C-states are enabled.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CStateModel {
    /// State labels, shallow to deep. Index 0 is C0.
    pub states: Vec<String>,
    /// Per-state leakage multiplier, same order as `states`.
    pub leak_factor: Vec<f64>,
    /// Idle-time split over the non-C0 states (len = states.len() - 1).
    pub idle_residency: Vec<f64>,
}

impl CStateModel {
    pub fn validate(&self) -> Result<()> {
        if self.states.len() < 2 || self.states.len() != self.leak_factor.len() {
            return Err(Error::Invariant("cstates: need C0 plus at least one idle state".into()));
        }
        if (self.leak_factor[0] - 1.0).abs() > EPS {
            return Err(Error::Invariant("cstates: leak_factor(C0) must be 1.0".into()));
        }
        for w in self.leak_factor.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Invariant(
                    "cstates: deeper states must have strictly smaller leak factors".into(),
                ));
            }
        }
        if self.leak_factor.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::Invariant("cstates: leak factors must lie in [0,1]".into()));
        }
        if self.idle_residency.len() != self.states.len() - 1 {
            return Err(Error::Invariant("cstates: idle residency must cover non-C0 states".into()));
        }
        if self.idle_residency.iter().any(|&r| r < 0.0) {
            return Err(Error::Invariant("cstates: residency entries must be >= 0".into()));
        }
        let sum: f64 = self.idle_residency.iter().sum();
        if (sum - 1.0).abs() > EPS {
            return Err(Error::Invariant(format!(
                "cstates: idle residency sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Leakage multiplier of a fully idle core with C-states enabled:
    /// the idle residency profile dotted with the non-C0 leak factors.
    pub fn idle_leak_dot(&self) -> f64 {
        self.idle_residency
            .iter()
            .zip(self.leak_factor.iter().skip(1))
            .map(|(r, l)| r * l)
            .sum()
    }
}

/// Static description of one socket.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SocketSpec {
    pub core_count: usize,
    pub dvfs: DvfsModel,
    pub cstates: CStateModel,
    /// Leakage of one core parked in C0, watts.
    pub static_per_core_c0: f64,
    /// Fixed uncore frequency, GHz (informational; uncore power is constant).
    pub uncore_freq_ghz: f64,
    /// Uncore power at the fixed uncore frequency, watts.
    pub uncore_power: f64,
    /// DRAM floor power, watts.
    pub dram_static: f64,
    /// DRAM power per GB/s of traffic.
    pub dram_bw_coeff: f64,
}

impl SocketSpec {
    pub fn validate(&self) -> Result<()> {
        self.dvfs.validate()?;
        self.cstates.validate()?;
        if self.core_count == 0 {
            return Err(Error::Invariant("socket: core_count must be > 0".into()));
        }
        if self.static_per_core_c0 < 0.0
            || self.uncore_power < 0.0
            || self.dram_static < 0.0
            || self.dram_bw_coeff < 0.0
        {
            return Err(Error::Invariant("socket: power coefficients must be >= 0".into()));
        }
        let ratio = self.idle_full_ratio();
        if !(0.20..=0.60).contains(&ratio) {
            return Err(Error::Invariant(format!(
                "socket: idle/full-load pkg ratio {ratio:.3} outside [0.20, 0.60]"
            )));
        }
        Ok(())
    }

    /// Socket pkg power with every core parked in C0 at zero utilization.
    pub fn idle_pkg_power(&self) -> f64 {
        self.core_count as f64 * self.static_per_core_c0 + self.uncore_power
    }

    /// Socket pkg power with every core at `f_max`, utilization 1.
    pub fn full_load_pkg_power(&self) -> f64 {
        let v = self.dvfs.voltage(self.dvfs.f_max_ghz);
        let per_core = self.dvfs.k_cap * v * v * self.dvfs.f_max_ghz;
        self.idle_pkg_power() + self.core_count as f64 * per_core
    }

    pub fn idle_full_ratio(&self) -> f64 {
        self.idle_pkg_power() / self.full_load_pkg_power()
    }
}

/// Per-tick state of one core.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoreState {
    pub core_id: CoreId,
    pub socket_id: SocketId,
    pub frequency_ghz: f64,
    pub cstates_enabled: bool,
    pub pinned_container: Option<String>,
    /// Busy fraction of the current tick, [0, 1].
    pub utilization: f64,
    /// Time split over all C-states for the current tick (index 0 = C0).
    pub residency: Vec<f64>,
}

impl CoreState {
    /// Recompute residency from utilization and the C-state switch.
    ///
    /// Active time is always C0. With C-states disabled the idle remainder
    /// also stays in C0; with them enabled it follows the idle profile.
    pub fn refresh_residency(&mut self, model: &CStateModel) {
        let n = model.states.len();
        let mut res = vec![0.0; n];
        if self.cstates_enabled {
            res[0] = self.utilization;
            for (i, share) in model.idle_residency.iter().enumerate() {
                res[i + 1] = (1.0 - self.utilization) * share;
            }
        } else {
            res[0] = 1.0;
        }
        self.residency = res;
    }

    pub fn validate(&self, spec: &SocketSpec) -> Result<()> {
        if !spec.dvfs.on_grid(self.frequency_ghz) {
            return Err(Error::Invariant(format!(
                "core {}: frequency {} off the DVFS grid",
                self.core_id, self.frequency_ghz
            )));
        }
        if !(0.0..=1.0 + EPS).contains(&self.utilization) {
            return Err(Error::Invariant(format!(
                "core {}: utilization {} outside [0,1]",
                self.core_id, self.utilization
            )));
        }
        if self.residency.len() != spec.cstates.states.len() {
            return Err(Error::Invariant(format!("core {}: residency arity", self.core_id)));
        }
        let sum: f64 = self.residency.iter().sum();
        if (sum - 1.0).abs() > EPS {
            return Err(Error::Invariant(format!(
                "core {}: residency sums to {sum}, expected 1",
                self.core_id
            )));
        }
        if !self.cstates_enabled && (self.residency[0] - 1.0).abs() > EPS {
            return Err(Error::Invariant(format!(
                "core {}: C-states disabled but residency not 100% C0",
                self.core_id
            )));
        }
        Ok(())
    }
}

/// Non-container pinned work (co-runners, OS / control-plane background).
/// Visible to the meter and, like any process, to usage accounting, but
/// carries no container identity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NativeProcess {
    pub name: String,
    pub core_id: CoreId,
    pub utilization: f64,
    pub bandwidth_gbs: f64,
}

/// Full simulated hardware state.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeState {
    pub spec: SocketSpec,
    pub socket_count: usize,
    pub cores: Vec<CoreState>,
    /// Which core each container is pinned to. Burstable containers may
    /// share a core; `CoreState::pinned_container` only names the last
    /// writer and is not used for accounting.
    pub container_core: BTreeMap<String, CoreId>,
    /// Per-container DRAM traffic for the current tick, GB/s.
    pub container_bandwidth: BTreeMap<String, f64>,
    /// Per-core DRAM traffic from native processes, GB/s.
    pub native_bandwidth: BTreeMap<CoreId, f64>,
}

impl NodeState {
    /// A node of `socket_count` identical sockets, all cores at `f_max`,
    /// C-states disabled, idle.
    pub fn new(spec: SocketSpec, socket_count: usize) -> Result<Self> {
        spec.validate()?;
        let mut cores = Vec::with_capacity(spec.core_count * socket_count);
        for socket in 0..socket_count {
            for i in 0..spec.core_count {
                let mut core = CoreState {
                    core_id: socket * spec.core_count + i,
                    socket_id: socket,
                    frequency_ghz: spec.dvfs.f_max_ghz,
                    cstates_enabled: false,
                    pinned_container: None,
                    utilization: 0.0,
                    residency: Vec::new(),
                };
                core.refresh_residency(&spec.cstates);
                cores.push(core);
            }
        }
        Ok(NodeState {
            spec,
            socket_count,
            cores,
            container_core: BTreeMap::new(),
            container_bandwidth: BTreeMap::new(),
            native_bandwidth: BTreeMap::new(),
        })
    }

    /// Pin a container to a core.
    pub fn pin_container(&mut self, container_id: &str, core_id: CoreId) -> Result<()> {
        self.core_mut(core_id)?.pinned_container = Some(container_id.to_string());
        self.container_core.insert(container_id.to_string(), core_id);
        Ok(())
    }

    pub fn core(&self, core_id: CoreId) -> Result<&CoreState> {
        self.cores
            .get(core_id)
            .ok_or_else(|| Error::Lookup(format!("unknown core {core_id}")))
    }

    pub fn core_mut(&mut self, core_id: CoreId) -> Result<&mut CoreState> {
        self.cores
            .get_mut(core_id)
            .ok_or_else(|| Error::Lookup(format!("unknown core {core_id}")))
    }

    /// Cores belonging to one socket.
    pub fn socket_cores(&self, socket_id: SocketId) -> impl Iterator<Item = &CoreState> {
        self.cores.iter().filter(move |c| c.socket_id == socket_id)
    }

    /// Total DRAM traffic attributable to a socket this tick, GB/s.
    pub fn socket_bandwidth(&self, socket_id: SocketId) -> f64 {
        let on_socket = |core_id: &CoreId| {
            self.cores
                .get(*core_id)
                .map(|c| c.socket_id == socket_id)
                .unwrap_or(false)
        };
        let containers: f64 = self
            .container_bandwidth
            .iter()
            .filter(|(id, _)| self.container_core.get(*id).map(on_socket).unwrap_or(false))
            .map(|(_, bw)| bw)
            .sum();
        let native: f64 = self
            .native_bandwidth
            .iter()
            .filter(|(core, _)| on_socket(core))
            .map(|(_, bw)| bw)
            .sum();
        containers + native
    }
}

/// One socket's true power split into its physical components.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PowerBreakdown {
    pub socket_id: SocketId,
    pub core_dynamic: Vec<f64>,
    pub core_static: Vec<f64>,
    pub uncore: f64,
    pub dram_static: f64,
    pub dram_dynamic: f64,
    pub pkg: f64,
    pub dram: f64,
}

impl PowerBreakdown {
    /// Re-derive the pkg/dram totals from the components; used by tests to
    /// check additivity independently of `socket_power`'s own summation.
    pub fn component_sums(&self) -> (f64, f64) {
        let pkg = self.core_dynamic.iter().sum::<f64>()
            + self.core_static.iter().sum::<f64>()
            + self.uncore;
        let dram = self.dram_static + self.dram_dynamic;
        (pkg, dram)
    }
}

/// Dynamic power of one core: `k_cap * V(f)^2 * f * u`.
///
/// Zero utilization draws nothing; for fixed `u > 0` the value grows
/// strictly with `f` because `V(f)^2 * f` does.
pub fn core_dynamic_power(dvfs: &DvfsModel, f_ghz: f64, utilization: f64) -> Result<f64> {
    if !dvfs.on_grid(f_ghz) {
        return Err(Error::InputDomain(format!("frequency {f_ghz} off the DVFS grid")));
    }
    if !(0.0..=1.0).contains(&utilization) {
        return Err(Error::InputDomain(format!("utilization {utilization} outside [0,1]")));
    }
    let v = dvfs.voltage(f_ghz);
    Ok(dvfs.k_cap * v * v * f_ghz * utilization)
}

/// Static (leakage) power of one core given its C-state residency.
pub fn core_static_power(spec: &SocketSpec, core: &CoreState) -> Result<f64> {
    let sum: f64 = core.residency.iter().sum();
    if (sum - 1.0).abs() > EPS || core.residency.len() != spec.cstates.leak_factor.len() {
        return Err(Error::Invariant(format!(
            "core {}: residency does not sum to 1",
            core.core_id
        )));
    }
    let weighted: f64 = core
        .residency
        .iter()
        .zip(spec.cstates.leak_factor.iter())
        .map(|(r, l)| r * l)
        .sum();
    Ok(spec.static_per_core_c0 * weighted)
}

/// DRAM power of one socket: static floor plus the linear bandwidth term.
pub fn dram_power(spec: &SocketSpec, total_bandwidth_gbs: f64) -> Result<f64> {
    if total_bandwidth_gbs < 0.0 {
        return Err(Error::InputDomain(format!(
            "negative bandwidth {total_bandwidth_gbs}"
        )));
    }
    Ok(spec.dram_static + spec.dram_bw_coeff * total_bandwidth_gbs)
}

/// True power of one socket for the current tick.
pub fn socket_power(state: &NodeState, socket_id: SocketId) -> Result<PowerBreakdown> {
    if socket_id >= state.socket_count {
        return Err(Error::Lookup(format!("unknown socket {socket_id}")));
    }
    let spec = &state.spec;
    let mut core_dynamic = Vec::with_capacity(spec.core_count);
    let mut core_static = Vec::with_capacity(spec.core_count);
    for core in state.socket_cores(socket_id) {
        core.validate(spec)?;
        core_dynamic.push(core_dynamic_power(&spec.dvfs, core.frequency_ghz, core.utilization)?);
        core_static.push(core_static_power(spec, core)?);
    }
    let dram_total = dram_power(spec, state.socket_bandwidth(socket_id))?;
    let dram_dynamic = dram_total - spec.dram_static;
    let pkg = core_dynamic.iter().sum::<f64>() + core_static.iter().sum::<f64>() + spec.uncore_power;
    Ok(PowerBreakdown {
        socket_id,
        core_dynamic,
        core_static,
        uncore: spec.uncore_power,
        dram_static: spec.dram_static,
        dram_dynamic,
        pkg,
        dram: spec.dram_static + dram_dynamic,
    })
}

/// Ground-truth dynamic power of one container: the dynamic power of the
/// core it is pinned to plus its own DRAM traffic. By construction this
/// never depends on what any other core is doing.
pub fn oracle_container_power(state: &NodeState, container_id: &str) -> Result<(f64, f64)> {
    let core_id = state
        .container_core
        .get(container_id)
        .ok_or_else(|| Error::Lookup(format!("container {container_id} not pinned to any core")))?;
    let core = state.core(*core_id)?;
    let pkg_dynamic = core_dynamic_power(&state.spec.dvfs, core.frequency_ghz, core.utilization)?;
    let bw = state
        .container_bandwidth
        .get(container_id)
        .copied()
        .unwrap_or(0.0);
    Ok((pkg_dynamic, state.spec.dram_bw_coeff * bw))
}

/// A single power-management setting change.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigChange {
    /// Pin one core to a grid frequency.
    CoreFrequency { core_id: CoreId, f_ghz: f64 },
    /// Enable or disable C-states on one core.
    CStates { core_id: CoreId, enabled: bool },
    /// Re-pin the (fixed) uncore frequency.
    UncoreFrequency { socket_id: SocketId, f_ghz: f64 },
}

/// Apply one configuration change, returning the updated state.
/// Residency is refreshed and the touched core re-validated.
pub fn apply_config(state: &NodeState, change: &ConfigChange) -> Result<NodeState> {
    let mut next = state.clone();
    match change {
        ConfigChange::CoreFrequency { core_id, f_ghz } => {
            if !next.spec.dvfs.on_grid(*f_ghz) {
                return Err(Error::InputDomain(format!(
                    "frequency {f_ghz} off the DVFS grid"
                )));
            }
            next.core_mut(*core_id)?.frequency_ghz = *f_ghz;
        }
        ConfigChange::CStates { core_id, enabled } => {
            let cstates = next.spec.cstates.clone();
            let core = next.core_mut(*core_id)?;
            core.cstates_enabled = *enabled;
            core.refresh_residency(&cstates);
        }
        ConfigChange::UncoreFrequency { socket_id, f_ghz } => {
            if *socket_id >= next.socket_count {
                return Err(Error::Lookup(format!("unknown socket {socket_id}")));
            }
            if !(*f_ghz > 0.0) {
                return Err(Error::InputDomain("uncore frequency must be > 0".into()));
            }
            next.spec.uncore_freq_ghz = *f_ghz;
        }
    }
    let spec = next.spec.clone();
    for core in &next.cores {
        core.validate(&spec)?;
    }
    Ok(next)
}
