//! Event-triggered leader-follower consensus with orchestrated edge weights.
//!
//! Nodes with single-integrator dynamics broadcast their state only when it
//! drifts more than `delta` from the last broadcast value. Under PETC each
//! follower raises its edge weights while its neighborhood is in an active
//! phase, prioritizing neighbors that broadcast more often, and lowers them
//! to `a_min` when idle. SETC keeps all weights constant.
//!
//! Modules, bottom-up:
//! - [`graph`]: topology, weight matrices, `F = L + K D` and its spectrum.
//! - [`signals`]: the leader command `c(t)`.
//! - [`triggering`]: broadcasts, event log, monitoring and active flags.
//! - [`coupling`]: the edge-weight dynamics.
//! - [`sim`]: the fixed-step closed loop.
//! - [`metrics`]: RMSE, effort, events, stability witnesses, comparisons.
//! - [`config`] and [`campaign`]: scenario files, seed sweeps and artifacts.

pub mod campaign;
pub mod config;
pub mod coupling;
pub mod export;
pub mod graph;
pub mod metrics;
pub mod signals;
pub mod sim;
pub mod triggering;

pub use config::{parse_config, Campaign, Mode, ScenarioConfig, TopologySpec};
pub use metrics::{compare_runs, ComparisonReport, RunMetrics};
pub use sim::{run_scenario, run_scenario_observed, RunArtifacts, RunOptions, SimError, Simulator};
