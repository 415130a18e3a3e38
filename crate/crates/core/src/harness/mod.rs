//! Experiment drivers behind the command line.

pub mod compare;
pub mod config;
pub mod verify;

pub use compare::{aggregate, episodes_to_accuracy, run_comparison, write_outputs, ComparisonResult};
pub use config::{ExperimentConfig, Method};
pub use verify::{run_theorem_suite, SuiteConfig, SuiteReport};
