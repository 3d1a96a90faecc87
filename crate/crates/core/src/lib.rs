//! Fair adversarial training laboratory.
//!
//! The crate is organized bottom-up:
//!
//! - [`analytic`]: the closed-form binary toy model (class-wise clean and
//!   robust accuracy of a linear classifier on a robust/non-robust feature
//!   distribution), a Monte-Carlo oracle for it, and automated checks of the
//!   four ordering properties the model predicts.
//! - [`nn`]: a small dense-network engine in `f64` with exact reverse-mode
//!   gradients, cross-entropy and KL losses, and momentum SGD.
//! - [`attacks`]: L∞ PGD against the cross-entropy or the KL objective.
//! - [`schedules`]: class-wise calibrated margins and regularization driven by
//!   tracked robust train accuracy, plus the AT and normalized TRADES losses.
//! - [`averaging`]: EMA of weights and its fairness-gated variant.
//! - [`metrics`]: per-class evaluation, worst-class statistics, fluctuation
//!   and checkpoint selection.
//! - [`data`]: synthetic generators, CSV ingestion and stratified splits.
//! - [`experiment`]: the training driver, sweeps and report emission.

pub mod analytic;
pub mod attacks;
pub mod averaging;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod schedules;

pub use error::{Error, Result};

pub use analytic::{LinearToyClassifier, TheoremReport, ToyClass, ToyModelParams};
pub use attacks::{AttackConfig, StepSize};
pub use averaging::{AveragedModel, AveragingMode};
pub use data::{DatasetSpec, LabeledDataset};
pub use experiment::{Method, RunConfig, RunHistory, RunOutcome};
pub use metrics::{ClassEval, EpochRecord};
pub use nn::{Activation, Batch, DenseNet, Gradients, OptState};
pub use schedules::{BudgetConfig, ClassState};
