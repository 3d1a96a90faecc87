//! Training driver, sweeps and report emission.

mod config;
mod report;
mod sweep;
mod train;

pub use config::{
    derive_seed, FawaConfig, Method, OptimConfig, RunConfig, TrainAttackConfig, Variant,
};
pub use report::{write_report, write_sweep_csv, CheckpointSummary, RunSummary};
pub use sweep::{sweep_beta, sweep_margin, SweepReport, SweepRow};
pub use train::{auto_delta, run_seeds, train, RunOutcome};

pub use crate::metrics::RunHistory;
