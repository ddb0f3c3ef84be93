use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

/// Provenance of one run. Checksums cover every output except the
/// manifest itself; timings are kept out of the outputs so that identical
/// configs give identical checksums.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub command: String,
    pub outputs: BTreeMap<String, String>,
    pub paths_simulated: u64,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config_hash: String, command: &str) -> Self {
        RunManifest {
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            outputs: BTreeMap::new(),
            paths_simulated: 0,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn record(&mut self, dir: &Path, file: &str) -> Result<()> {
        let sum = sha256_file(&dir.join(file))?;
        self.outputs.insert(file.to_string(), sum);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Files whose current checksum differs from the recorded one.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (file, sum) in &self.outputs {
            let p = dir.join(file);
            if !p.exists() || &sha256_file(&p)? != sum {
                bad.push(file.clone());
            }
        }
        Ok(bad)
    }
}
