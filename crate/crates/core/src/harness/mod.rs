//! Experiment configuration, seeding, task assembly, run records and reports.

pub mod config;
pub mod experiments;
pub mod persist;
pub mod record;
pub mod report;
pub mod scopes;
pub mod svg;
pub mod tasks;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{protocol, run_baseline, run_seed, seed_dir_name, seed_pair, Arm, Baseline, FrozenSetup, SeedOutcome};
pub use persist::{load_model, save_model};
pub use record::{read_records, run, RunRecord, RunStatus};
pub use scopes::{seed_everything, SeedScopes};
pub use report::{report, sweep_rows, PlotKind, SweepRow};
