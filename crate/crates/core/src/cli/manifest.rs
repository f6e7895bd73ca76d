//! Run manifests: what ran, on which bytes, with which seeds, and what it
//! measured.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::simulator::SimulatorStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    /// Fully resolved configuration (or command arguments for commands
    /// without a config file).
    pub config: serde_json::Value,
    /// Input path → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output path → sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub started_at: String,
    pub finished_at: String,
    pub metrics: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<SimulatorStats>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started_at: timestamp(),
            finished_at: String::new(),
            metrics: serde_json::Value::Null,
            backend: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> io::Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Stamps the end time and writes pretty JSON with a trailing newline.
    pub fn finish(mut self, path: &Path) -> io::Result<Self> {
        self.finished_at = timestamp();
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, text)?;
        Ok(self)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// RFC 3339 UTC time; pinned to `SOURCE_DATE_EPOCH` when that variable
/// holds an integer, which makes manifests reproducible byte for byte.
pub fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let mut m = RunManifest::new("synth", serde_json::json!({"n": 3}));
        m.add_input(&input).unwrap();
        m.seeds.insert("seed".into(), 7);
        let out = dir.path().join("m.json");
        let written = m.finish(&out).unwrap();
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(back, written);
        assert_eq!(back.inputs.values().next().unwrap(), &sha256_hex(b"abc"));
    }
}
