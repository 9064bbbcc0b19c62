use std::collections::BTreeMap;
use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mvnet::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        }
    }
}

/// Record of one command invocation: enough to run it again with the same
/// inputs and compare output hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config_paths: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            tool: "mvnet".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            config_paths: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    /// Reads a file and records its hash.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(Artifact::of(path, &bytes));
        Ok(bytes)
    }

    pub fn read_config(&mut self, role: &str, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        self.config_paths.insert(role.into(), path.display().to_string());
        String::from_utf8(bytes).map_err(|_| mvnet::Error::Config(format!("{} is not UTF-8", path.display())))
    }

    /// Writes a file and records its hash.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        std::fs::write(path, bytes)?;
        self.outputs.push(Artifact::of(path, bytes));
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_at = now();
        let mut s = serde_json::to_string_pretty(&self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}
