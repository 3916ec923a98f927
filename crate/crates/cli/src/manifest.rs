use std::path::Path;

use handsoff::jobs::Outcome;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct ConfigRecord {
    /// Absent for demos, whose config is built in.
    pub path: Option<String>,
    pub sha256: String,
}

impl ConfigRecord {
    pub fn new(path: Option<&Path>, bytes: &[u8]) -> Self {
        Self {
            path: path.map(|p| p.display().to_string()),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// Written as `PREFIX.manifest.json` by every command that writes files.
/// `wall_time` is the only field that changes between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ConfigRecord,
    pub seed: Option<u64>,
    pub version: String,
    pub outcome: Outcome,
    pub outputs: Vec<String>,
    pub wall_time: f64,
}
