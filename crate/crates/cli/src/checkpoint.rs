//! JSON checkpoints: config, parameter values, step and optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::model::Model;

pub const FORMAT: &str = "hyp3d-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedValues {
    pub tag: String,
    pub value: Vec<f64>,
}

/// Moment buffers, one per parameter. SGD uses `m` as its velocity and
/// leaves `v` empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub step: usize,
    pub params: Vec<NamedValues>,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, step: usize, model: &Model, optimizer: OptimizerState) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            step,
            params: model
                .params
                .iter()
                .map(|p| NamedValues {
                    tag: p.tag.clone(),
                    value: p.value.clone(),
                })
                .collect(),
            optimizer,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(CliError::Parse {
                path: path.display().to_string(),
                msg: format!("not a {FORMAT} v{VERSION} file"),
            });
        }
        if ck.config_hash != ck.config.hash() {
            return Err(CliError::Checkpoint(format!(
                "{}: stored config hash does not match its config",
                path.display()
            )));
        }
        Ok(ck)
    }

    pub fn model(&self) -> CliResult<Model> {
        let values = self.params.iter().map(|p| (p.tag.clone(), p.value.clone())).collect();
        Model::from_values(&self.config, values)
    }
}
