//! Measurement instruments: per-stage CKA, freezing and reset sweeps,
//! reset-and-retrain, linear probes on activations and forgetting metrics.

mod cka;
mod linear;
mod report;
mod sweeps;

pub use cka::{cka_matrices, linear_cka, probe_set, record_stage_activations, stage_cka, ActivationMatrix, PROBE_CAP};
pub use linear::{linear_probe, LinearProbeConfig, LinearProbeResult};
pub use report::{forgetting_report, percent_drop, ForgettingReport, TaskAccuracy};
pub(crate) use report::csv_err;
pub use sweeps::{freeze_sweep, reset_and_retrain, reset_sweep, FreezeArm, ResetArm, ResetDirection};
