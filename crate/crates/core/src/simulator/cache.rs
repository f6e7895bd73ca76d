//! Persistent response cache, one JSON record per line.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ScoringDecoding, SimulatorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key_hash: String,
    pub prompt: String,
    pub decoding: ScoringDecoding,
    pub raw_text: String,
    pub backend_id: String,
    pub timestamp: String,
}

/// SHA-256 over the canonical JSON encoding of (backend id, prompt, decoding).
pub fn cache_key(backend_id: &str, prompt: &str, decoding: &ScoringDecoding) -> String {
    let canonical = serde_json::to_string(&(backend_id, prompt, decoding)).expect("key serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Concurrent readers, serialized writers. Inserting an existing key is a
/// no-op, so racing identical requests leave a single entry.
#[derive(Debug, Default)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheRecord>>,
    writer: Mutex<()>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or lazily creates) a JSONL cache file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SimulatorError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| SimulatorError::Cache(e.to_string()))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(line)
                    .map_err(|e| SimulatorError::Cache(format!("line {}: {e}", i + 1)))?;
                entries.entry(rec.key_hash.clone()).or_insert(rec);
            }
        }
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            ..Self::default()
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let found = self
            .entries
            .read()
            .expect("cache lock")
            .get(key)
            .map(|r| r.raw_text.clone());
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    /// Returns false when the key was already present.
    pub fn insert(&self, record: CacheRecord) -> Result<bool, SimulatorError> {
        let _guard = self.writer.lock().expect("cache writer lock");
        if self.entries.read().expect("cache lock").contains_key(&record.key_hash) {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| SimulatorError::Cache(e.to_string()))?;
            }
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(line.as_bytes()))
                .map_err(|e| SimulatorError::Cache(e.to_string()))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(record.key_hash.clone(), record);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(key: &str, text: &str) -> CacheRecord {
        CacheRecord {
            key_hash: key.into(),
            prompt: "p".into(),
            decoding: ScoringDecoding::default(),
            raw_text: text.into(),
            backend_id: "b".into(),
            timestamp: "t".into(),
        }
    }

    #[test]
    fn key_depends_on_every_component() {
        let d = ScoringDecoding::default();
        let base = cache_key("a", "p", &d);
        assert_eq!(base.len(), 64);
        assert_eq!(base, cache_key("a", "p", &d));
        assert_ne!(base, cache_key("b", "p", &d));
        assert_ne!(base, cache_key("a", "q", &d));
        assert_ne!(base, cache_key("a", "p", &ScoringDecoding { seed: 1, ..d }));
    }

    #[test]
    fn persists_and_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("c.jsonl");
        let cache = ResponseCache::open(&path).unwrap();
        assert!(cache.insert(record("k", "one")).unwrap());
        assert!(!cache.insert(record("k", "two")).unwrap());
        assert_eq!(cache.get("k").as_deref(), Some("one"));
        assert_eq!(cache.get("missing"), None);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));

        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn concurrent_identical_inserts_store_one_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let cache = ResponseCache::open(&path).unwrap();
        std::thread::scope(|s| {
            for i in 0..8 {
                let cache = &cache;
                s.spawn(move || cache.insert(record("same", &format!("v{i}"))).unwrap());
            }
        });
        assert_eq!(cache.len(), 1);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }
}
