//! Run directories: every command writes its artifacts under one directory
//! together with a `manifest.json` that records the resolved configuration,
//! its hash, tool versions and a digest of each artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub regclosure: String,
    pub regclosure_cli: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            regclosure: regclosure::VERSION.into(),
            regclosure_cli: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub versions: Versions,
    pub config: ExperimentConfig,
    /// Input files with their digests at the time of the run.
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))
    }
}

pub struct RunDir {
    pub root: PathBuf,
    command: String,
    config: ExperimentConfig,
    inputs: Vec<Artifact>,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.into(),
            config: config.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(Artifact {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Registers a file some other code already wrote under the root.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let path = self.path(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(Artifact {
            path: rel.into(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(Artifact {
            path: rel.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn finish(self) -> Result<Manifest> {
        let manifest = Manifest {
            config_hash: sha256_hex(self.config.to_toml().as_bytes()),
            command: self.command,
            versions: Versions::default(),
            config: self.config,
            inputs: self.inputs,
            artifacts: self.artifacts,
        };
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Core(e.into()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
