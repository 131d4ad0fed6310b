//! Scenario runner for `resin-core`: configuration, closed-loop
//! simulation, baseline planners, metrics and CSV outputs.

pub mod baselines;
pub mod config;
pub mod error;
pub mod metrics;
pub mod output;
pub mod scenario;
pub mod sweep;

pub use config::{PlannerKind, ScenarioConfig};
pub use error::{BenchError, Result};
pub use output::{emit_outputs, Manifest};
pub use scenario::{run_scenario, RunOutput};
pub use sweep::{report, sweep, SummaryRow};
