//! JSON model checkpoints.
//!
//! A checkpoint holds the effective training configuration, the feature
//! front-end settings and standardization statistics, the loss trace and
//! every parameter tensor with its shape. Floats are written in shortest
//! round-trip form, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, ModelParams, TrainConfig};
use crate::data::features::{FeatureConfig, Standardizer};
use crate::error::{Error, Result};
use crate::targetdist::ClassWeights;

pub const CHECKPOINT_FORMAT: &str = "hlmelody-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub train_config: TrainConfig,
    pub features: FeatureConfig,
    pub standardizer: Standardizer,
    pub class_weights: ClassWeights,
    pub epochs_done: usize,
    pub trace: Vec<EpochRecord>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        train_config: TrainConfig,
        features: FeatureConfig,
        standardizer: Standardizer,
        class_weights: ClassWeights,
        trace: Vec<EpochRecord>,
        params: ModelParams,
    ) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            epochs_done: trace.last().map_or(0, |r| r.epoch),
            train_config,
            features,
            standardizer,
            class_weights,
            trace,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Mismatch(format!("not a checkpoint file (format {:?})", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Mismatch(format!("unsupported checkpoint version {}", c.version)));
        }
        if c.params.method != c.train_config.method {
            return Err(Error::Mismatch("checkpoint parameters and config disagree on method".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
