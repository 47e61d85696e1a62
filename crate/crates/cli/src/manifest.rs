use std::path::{Path, PathBuf};

use hcv_core::io::write_atomic;
use hcv_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "hcv-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    /// `gen`, `train` or `sweep`.
    pub command: String,
    /// The fully resolved configuration the command ran with.
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn digest_outputs(out_dir: &Path, outputs: &[PathBuf]) -> Result<Vec<FileDigest>> {
    outputs
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            Ok(FileDigest {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!("unsupported manifest format {:?}", m.format)));
        }
        Ok(m)
    }
}
