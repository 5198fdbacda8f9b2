// SPDX-License-Identifier: Apache-2.0

//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{EncodingConfig, ModelConfig};
use crate::synthesis::demo::DemoShape;
use crate::synthesis::SynthesisConfig;
use crate::train_eval::TrainConfig;

/// Width of the stub text encoder used by the command line.
pub const CLI_TEXT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `frame_dim` and `patches` are always taken from the corpus.
    pub model: ModelConfig,
    pub encoding: EncodingConfig,
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    pub demo: DemoShape,
    /// Frame budgets for `ablate --kind frames`.
    pub frame_counts: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let demo = DemoShape::default();
        RunConfig {
            model: ModelConfig::desk(CLI_TEXT_DIM, demo.frame_dim, demo.patches),
            encoding: EncodingConfig::default(),
            train: TrainConfig::default(),
            synthesis: SynthesisConfig::default(),
            demo,
            frame_counts: vec![1, 6, 18],
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    /// Defaults overlaid with the tables present in `text`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`, otherwise the file layered on top.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml_str(&text)
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synthesis.validate()?;
        if self.frame_counts.is_empty() || self.frame_counts.contains(&0) {
            return Err(Error::Config("frame_counts must be nonempty and positive".into()));
        }
        Ok(())
    }

    /// Model settings sized for a corpus with the given patch grid.
    pub fn model_for(&self, patches: usize, frame_dim: usize) -> ModelConfig {
        ModelConfig { patches, frame_dim, ..self.model.clone() }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}
