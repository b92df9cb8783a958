//! Three-state model for treatment crossover in survival trials: piecewise hazards,
//! exact trial simulation, crossover-adjustment estimators and a replication harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjust;
pub mod error;
pub mod fit;
pub mod harness;
pub mod hazard;
pub mod rng;
pub mod simulate;

pub use adjust::{estimate, AdjusterConfig, MethodId};
pub use error::{Result, TsmError};
pub use fit::{cox_fit, FitResult, SurvDataset};
pub use harness::{run_replications, Preset, ReplicationOptions, ReplicationReport};
pub use hazard::{marginal_survival, Clock, CrossoverKind, GeneralHazard, PiecewiseHazard};
pub use simulate::{simulate_trial, CrossoverScenario, PatientRecord};
