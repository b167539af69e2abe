use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::fsutil;

/// Provenance record written next to every artifact as `<artifact>.manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub master_seed: u64,
    pub vocab_hash: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, flags: &impl Serialize, master_seed: u64, vocab_hash: &str) -> CliResult<Self> {
        Ok(Self {
            command: command.into(),
            flags: serde_json::to_value(flags).map_err(|e| CliError::Data(e.to_string()))?,
            master_seed,
            vocab_hash: vocab_hash.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: Vec::new(),
        })
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamps the finish time and writes the manifest beside `artifact`.
    pub fn finish(mut self, artifact: &Path) -> CliResult<()> {
        self.finished_unix = unix_now();
        let path = manifest_path(artifact);
        let mut json = serde_json::to_string_pretty(&self).map_err(|e| CliError::Data(e.to_string()))?;
        json.push('\n');
        fsutil::write_atomic(&path, json.as_bytes())
    }
}

pub fn manifest_path(artifact: &Path) -> std::path::PathBuf {
    fsutil::sibling(artifact, ".manifest.json")
}
