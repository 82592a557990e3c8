//! Calibrated desk-scale settings shared by the examples, the shipped
//! configs and the acceptance suite.
//!
//! The suppression experiments use mini-batches of 3. A median of three
//! batch means can only discard an example's private gradient when that
//! contribution stands out from the other two batches, which needs small
//! batches; with large ones RM3 behaves like SGD.

use super::{noisy_copy, NetConfig};
use crate::data::{gen_synthetic, NoisyDataset, SyntheticParams};
use crate::error::Result;
use crate::optim::{OptimizerConfig, OptimizerKind, Schedule};

pub const EPOCHS: usize = 100;
pub const RUN_SEED: u64 = 1;
pub const NOISE_SEED: u64 = 7;
pub const EVAL_CAP: usize = 1000;

pub fn clean_dataset() -> Result<NoisyDataset> {
    gen_synthetic(&SyntheticParams::canonical())
}

/// The canonical dataset with a fraction `p` of training labels corrupted.
pub fn noisy_dataset(clean: &NoisyDataset, p: f64) -> Result<NoisyDataset> {
    noisy_copy(clean, p, EVAL_CAP, NOISE_SEED)
}

pub fn net() -> NetConfig {
    NetConfig::default()
}

/// Batch 3, base rate 0.05 cut tenfold every 20 epochs, no momentum.
pub fn suppression_optimizer(kind: OptimizerKind) -> OptimizerConfig {
    let mut cfg = OptimizerConfig::new(kind, 0.05, 3);
    cfg.schedule = Schedule::StepDecay {
        period_epochs: 20,
        factor: 0.1,
    };
    cfg
}

/// Plain SGD for the label-noise sweep, the easy/hard split runs and the
/// anti-adversarial runs.
pub fn baseline_optimizer() -> OptimizerConfig {
    OptimizerConfig::new(OptimizerKind::Sgd, 0.1, 32)
}

/// Epoch budget of each run in the label-noise sweep.
pub const SWEEP_EPOCHS: usize = 60;

/// Easy/hard splits are taken at the first epoch with this train accuracy.
pub const SPLIT_THRESHOLD: f64 = 0.5;
pub const SPLIT_MAX_EPOCHS: usize = 50;
pub const XGEN_EPOCHS: usize = 40;
/// Split runs behind each difficulty score.
pub const DIFFICULTY_RUNS: usize = 8;
