//! Experiment harness around `sdeconv-core`: configuration, streaming
//! convergence runs with CSV/JSON output, verification suites and
//! coefficient summaries.

pub mod coeff_info;
pub mod config;
pub mod descriptor;
pub mod experiment;
pub mod verify;

pub use config::{ConfigError, EstimatorOptions, ExperimentConfig, MollifierParams};
pub use descriptor::Descriptor;
pub use experiment::{run_convergence, Experiment, RunOutcome};
pub use verify::{run_verify, Selector, VerifyReport};
