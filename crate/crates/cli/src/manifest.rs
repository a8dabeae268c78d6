//! Per-stage provenance record with content digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{layout, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub timestamp: u64,
    /// SHA-256 of the configuration as TOML.
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

fn sorted_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            sorted_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory tree as the hash of its sorted
/// `(relative path, file digest)` list.
pub fn digest_path(path: &Path) -> Result<String, CliError> {
    if path.is_dir() {
        let mut files = Vec::new();
        sorted_files(path, &mut files)?;
        let mut h = Sha256::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            h.update(rel.to_string_lossy().replace('\\', "/").as_bytes());
            h.update([0]);
            h.update(digest_path(&f)?.as_bytes());
            h.update([b'\n']);
        }
        Ok(format!("{:x}", h.finalize()))
    } else {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(format!("{:x}", Sha256::digest(&bytes)))
    }
}

fn digests(items: &[(&str, PathBuf)]) -> Result<BTreeMap<String, String>, CliError> {
    items
        .iter()
        .map(|(k, p)| Ok((k.to_string(), digest_path(p)?)))
        .collect()
}

/// Reads the run manifest, or starts a fresh one when absent or unreadable.
pub fn load(cfg: &RunConfig) -> RunManifest {
    let fresh = || RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        stages: BTreeMap::new(),
    };
    fs::read(cfg.out_path(layout::MANIFEST))
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .unwrap_or_else(fresh)
}

/// Records one stage's input and output digests and rewrites the manifest.
pub fn record(
    cfg: &RunConfig,
    stage: &str,
    inputs: &[(&str, PathBuf)],
    outputs: &[(&str, PathBuf)],
) -> Result<RunManifest, CliError> {
    let mut m = load(cfg);
    m.tool_version = env!("CARGO_PKG_VERSION").to_string();
    m.config = cfg.clone();
    m.stages.insert(
        stage.to_string(),
        StageRecord {
            timestamp: cfg.timestamp(),
            config: format!("{:x}", Sha256::digest(cfg.to_toml().as_bytes())),
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
        },
    );
    let path = cfg.out_path(layout::MANIFEST);
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(m)
}
