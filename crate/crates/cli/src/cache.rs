//! Content checksums and per-stage logs for cached re-runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Checksum of a file, or of every file below a directory together with its
/// relative path.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut h = Sha256::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(path)?;
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(sha256_file(entry.path())?.as_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Skipped,
    Failed,
}

/// JSON log written next to the artifacts of each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: String,
    pub status: StageStatus,
    /// Checksum over the stage name, its parameters and its input checksums.
    pub key: String,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageLog {
    /// Whether the recorded outputs are still on disk unchanged.
    pub fn outputs_intact(&self, root: &Path) -> bool {
        self.outputs
            .iter()
            .all(|(rel, sum)| sha256_path(&root.join(rel)).is_ok_and(|s| &s == sum))
    }
}
