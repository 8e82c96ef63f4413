use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch. Not covered by the digest.
    pub timestamp: u64,
}

/// Collects the artifacts of one command and emits its manifest last.
pub struct Artifacts {
    command: &'static str,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            written: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish<C: Serialize>(self, manifest_path: &Path, config: &C, seed: Option<u64>) -> Result<()> {
        let canonical = serde_json::to_vec(config)?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_digest: hex::encode(Sha256::digest(&canonical)),
            seed,
            artifacts: self.written.iter().map(|p| p.display().to_string()).collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        write_atomic(manifest_path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())
    }
}

/// `<path>.manifest.json` for single-file outputs.
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// `<path minus extension>.<suffix>`, for reports written next to a model.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}
