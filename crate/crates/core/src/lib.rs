//! Deterministic simulator of server CPU power (cores under DVFS and
//! C-states, uncore, DRAM) hosting pinned containerized workloads, with a
//! per-container ground-truth oracle, ratio-model and resource-centric
//! power attribution estimators, and an accuracy-validation framework
//! (baseline subtraction, frequency / multi-tenancy / C-state tests,
//! outlier cleaning, CV stability analysis and margin verdicts).

pub mod attribution;
pub mod calibrate;
pub mod error;
pub mod report;
pub mod scenario;
pub mod simnode;
pub mod telemetry;
pub mod valframe;
pub mod workloads;

pub use attribution::{
    AttributionResult, EntityPower, Estimator, EstimatorConfig, EstimatorMode, SYSTEM_ID,
};
pub use error::{Error, Result};
pub use scenario::ScenarioConfig;
pub use simnode::{CoreState, DvfsModel, NodeState, PowerBreakdown, SocketSpec};
pub use telemetry::{NoiseModel, PowerSample, UsageSample};
pub use valframe::{BaselineStats, ComparisonVerdict, StabilityStats, TestKind, TestReport};
pub use workloads::{ContainerDeployment, RequestSchedule, WorkloadSpec};
