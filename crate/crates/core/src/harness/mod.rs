//! Scenario-driven runs, logging and the command-line front end.

pub mod cli;
pub mod output;
pub mod scenario;
pub mod sim;

pub use output::{FidelityReport, Table};
pub use scenario::{Mode, Scenario, ScenarioFile};
pub use sim::{run_with_oracle, simulate, stability_report, RunOutput, Simulation};
