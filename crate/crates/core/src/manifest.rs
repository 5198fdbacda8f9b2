// SPDX-License-Identifier: Apache-2.0

//! Run manifests: one JSON file per command invocation recording what went
//! in, what came out, and under which configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CACHE_DIR_ENV: &str = "POSTCHECK_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".postcheck";

/// Content id in git's SHA-256 object format: the hash of
/// `"blob <len>\0"` followed by the bytes.
pub fn artifact_id(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub id: String,
}

impl Artifact {
    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Artifact { path: path.to_path_buf(), id: artifact_id(&bytes) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub exit_code: i32,
    /// Milliseconds since the Unix epoch.
    pub started_ms: u128,
    pub finished_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// `$POSTCHECK_CACHE_DIR`, or `.postcheck` in the working directory.
pub fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config_hash: String, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config_hash,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            exit_code: 0,
            started_ms: now_ms(),
            finished_ms: 0,
        }
    }

    /// Records files that exist; missing ones are left out.
    pub fn add_inputs(&mut self, paths: &[&Path]) {
        self.inputs.extend(paths.iter().filter_map(|p| Artifact::of_file(p).ok()));
    }

    pub fn add_outputs(&mut self, paths: &[&Path]) {
        self.outputs.extend(paths.iter().filter_map(|p| Artifact::of_file(p).ok()));
    }

    /// Writes the manifest under `<dir>/manifests/` and returns its path.
    pub fn write(&mut self, dir: &Path, exit_code: i32) -> Result<PathBuf> {
        self.exit_code = exit_code;
        self.finished_ms = now_ms();
        let out = dir.join("manifests");
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let body = serde_json::to_string_pretty(self)? + "\n";
        let name = format!("{}-{}-{}.json", self.command, self.started_ms, &artifact_id(body.as_bytes())[..12]);
        let path = out.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}
