//! Versioned JSON checkpoints.
//!
//! Floats are printed with the shortest representation that parses back to
//! the same bits, so a save/load cycle is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::StandardizeStats;
use crate::graph::GraphKind;
use crate::io::{read_to_string, write_json_atomic};
use crate::model::{ModelConfig, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub graph_kind: GraphKind,
    pub gamma: f64,
    /// Feature standardization fitted on the training speakers.
    pub standardizer: StandardizeStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: CheckpointConfig,
    pub class_names: Vec<String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: CheckpointConfig, class_names: Vec<String>, params: ModelParams) -> Self {
        Self { format_version: FORMAT_VERSION, config, class_names, params }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let model = &self.config.model;
        model.validate()?;
        self.params.check_shapes(model)?;
        if self.class_names.len() != model.c {
            return Err(Error::Shape(format!(
                "{} class names for a {}-class model",
                self.class_names.len(),
                model.c
            )));
        }
        if self.config.standardizer.d() != model.d || self.config.standardizer.std.len() != model.d {
            return Err(Error::Shape("standardizer dimension differs from model d".into()));
        }
        if !self.params.is_finite() {
            return Err(Error::Invalid("checkpoint holds non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| Error::data(path, None, format!("bad checkpoint: {e}")))?;
        ck.validate().map_err(|e| Error::data(path, None, e.to_string()))?;
        Ok(ck)
    }
}
