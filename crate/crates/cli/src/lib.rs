//! File formats, experiment configuration, the seeded sweep harness and
//! plot emission for `holdpp-core`. The `holdpp` binary wraps these.

pub mod config;
pub mod harness;
pub mod io;
pub mod plots;

pub use config::ExperimentConfig;
pub use harness::{aggregate_ci, run_experiment, RunRecord};
