//! Versioned JSON container for a model and the optimizer state driving it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpState};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: MlpState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_state: Option<OptimizerState>,
    /// Completed epochs.
    pub epochs_done: usize,
    /// Seed of the run that produced it (controls epoch shuffles).
    pub run_seed: u64,
}

impl Checkpoint {
    pub fn model_only(net: &Mlp) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: net.to_state(),
            optimizer: None,
            optimizer_state: None,
            epochs_done: 0,
            run_seed: net.seed(),
        }
    }

    pub fn new(net: &Mlp, opt: &Optimizer, epochs_done: usize, run_seed: u64) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: net.to_state(),
            optimizer: Some(opt.config().clone()),
            optimizer_state: Some(opt.state().clone()),
            epochs_done,
            run_seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn model(&self) -> Result<Mlp> {
        Mlp::from_state(&self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn round_trip_is_exact() {
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, 77).unwrap();
        let ck = Checkpoint::model_only(&net);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap(), net);
    }

    #[test]
    fn rejects_unknown_version() {
        let net = Mlp::new(&[2, 2], Activation::Relu, 1).unwrap();
        let mut ck = Checkpoint::model_only(&net);
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
