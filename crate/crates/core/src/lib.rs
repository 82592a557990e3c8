//! Robust gradient aggregation for mini-batch training and a desk-scale
//! harness for label-noise and easy/hard-example experiments.
//!
//! * [`nn`]: dense classifier with exact per-example gradients.
//! * [`aggregate`]: mean, median of 3, median of means, winsorized sum,
//!   geometric median.
//! * [`optim`]: SGD, M3, RM3, RA3 and winsorized SGD with momentum and
//!   learning-rate schedules.
//! * [`data`]: synthetic clusters, IDX ingestion, label corruption.
//! * [`harness`]: training runs, metrics and experiment protocols.
//! * [`cli`]: the `cgrad` command implementations.

pub mod aggregate;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod verify;

pub use error::{Error, IdxError, Result};
pub use nn::{Activation, Batch, Mlp, ParamVector};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, Schedule};
