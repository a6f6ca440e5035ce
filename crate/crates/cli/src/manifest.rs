//! Run manifest: everything needed to repeat a run.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use beqh_core::beq::BeqConfig;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BackendInfo {
    pub kind: String,
    pub toolchain: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Effective arguments, config-file values included.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub datasets: Vec<DatasetDigest>,
    pub backend: Option<BackendInfo>,
    pub beq: Option<BeqConfig>,
    pub outputs: Vec<String>,
    pub exit_code: u8,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, jobs: usize) -> Self {
        Self {
            tool: "beqh",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args,
            seed: None,
            jobs,
            datasets: Vec::new(),
            backend: None,
            beq: None,
            outputs: Vec::new(),
            exit_code: 0,
        }
    }

    pub fn add_dataset(&mut self, role: &str, path: &Path) -> io::Result<()> {
        self.datasets.push(DatasetDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
