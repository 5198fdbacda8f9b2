// SPDX-License-Identifier: Apache-2.0

//! Self-describing checkpoint files with integrity hashes.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::input::EncodingConfig;
use super::network::Detector;
use super::ModelConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "postcheck-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub config_hash: String,
    pub encoding: EncodingConfig,
    pub max_frames: usize,
    pub params: Vec<StoredParam>,
    pub params_hash: String,
}

/// SHA-256 over parameter names, shapes, and little-endian values.
pub fn params_hash(params: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (name, v) in params.iter() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((v.nrows() as u64).to_le_bytes());
        h.update((v.ncols() as u64).to_le_bytes());
        for x in v.iter() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn from_detector(det: &Detector) -> Self {
        let params = det
            .params
            .iter()
            .map(|(name, v)| StoredParam {
                name: name.to_string(),
                shape: [v.nrows(), v.ncols()],
                data: v.iter().copied().collect(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: det.config.clone(),
            config_hash: det.config.hash(),
            encoding: det.encoding.clone(),
            max_frames: det.max_frames,
            params,
            params_hash: params_hash(&det.params),
        }
    }

    /// Rebuilds the parameter store and checks both hashes.
    pub fn param_store(&self) -> Result<ParamStore> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let computed = self.config.hash();
        if computed != self.config_hash {
            return Err(Error::CheckpointHash { stored: self.config_hash.clone(), computed });
        }
        let mut store = ParamStore::new();
        for p in &self.params {
            let arr = Array2::from_shape_vec((p.shape[0], p.shape[1]), p.data.clone())
                .map_err(|e| Error::Format(format!("parameter {}: {e}", p.name)))?;
            store.insert(p.name.clone(), arr);
        }
        let computed = params_hash(&store);
        if computed != self.params_hash {
            return Err(Error::CheckpointHash { stored: self.params_hash.clone(), computed });
        }
        Ok(store)
    }

    pub fn into_detector(self) -> Result<Detector> {
        let params = self.param_store()?;
        let expected = super::init_params(&self.config);
        let names_match = expected.len() == params.len()
            && expected.iter().zip(params.iter()).all(|((a, va), (b, vb))| a == b && va.dim() == vb.dim());
        if !names_match {
            return Err(Error::Format("checkpoint parameters do not match the configuration".into()));
        }
        Detector::new(self.config, params, self.encoding, self.max_frames)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl Detector {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_detector(self).save(path)
    }

    pub fn load(path: &Path) -> Result<Detector> {
        Checkpoint::load(path)?.into_detector()
    }
}
