//! Experiment harness for `nudgefem`: saturation and convergence suites with
//! CSV/TSV/JSON outputs.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{ExperimentKind, ExperimentSpec, Overrides};
pub use experiment::{run_convergence, run_saturation, run_suite, RunOutcome, RunRole, RunSummary, SuiteReport};
