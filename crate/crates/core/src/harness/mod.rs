//! Experiment plumbing: configuration, seeded streams, run orchestration,
//! CSV persistence and the property-check driver.

pub mod checks;
pub mod config;
pub mod rng;
pub mod run;

pub use checks::{run_checks, CheckReport};
pub use config::{preset, ExperimentConfig, PRESETS};
pub use rng::rng_split;
pub use run::{run_experiment, run_seed, write_outputs, RunRecord, SeedRun};
