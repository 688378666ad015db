//! Run manifests: the resolved configuration, its content hash, the seed
//! list, and a version tag — enough to reproduce a run bit-identically.

use rots_core::{CoreError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: serde_json::Value,
    config_sha256: String,
    seeds: &'a [u64],
}

/// SHA-256 over the canonical JSON serialization of a value.
pub fn content_hash(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json value serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: &impl Serialize,
    seeds: &[u64],
) -> Result<()> {
    let config = serde_json::to_value(config)
        .map_err(|e| CoreError::Arg(format!("config not serializable: {e}")))?;
    let manifest = RunManifest {
        tool: "rots",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: content_hash(&config),
        config,
        seeds,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::Arg(format!("manifest not serializable: {e}")))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}
