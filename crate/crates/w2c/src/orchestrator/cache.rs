//! Response cache: an append-only JSONL log of backend responses keyed by
//! request hash, loaded back on warm runs so repeated work costs nothing.
//!
//! Keys capture every request-relevant parameter, so the cache is safe to
//! reuse across config changes that only affect later stages (for example
//! the output format).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Which pipeline stage produced a cached response. Metadata only: lookups
/// go by key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Caption,
    Grounding,
    RegionCaption,
    Ocr,
    CountingFilter,
    ConceptValidation,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageCacheEntry {
    key: String,
    stage: Stage,
    payload: serde_json::Value,
}

pub struct ResponseCache {
    entries: Mutex<HashMap<String, serde_json::Value>>,
    writer: Mutex<BufWriter<File>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    /// Opens (or creates) the cache log at `path`, loading existing entries.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (number, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: StageCacheEntry = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("cache line {}: {e}", number + 1),
                    )
                })?;
                entries.insert(entry.key, entry.payload);
            }
        }
        let writer = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(Self {
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn get(&self, key: &str) -> Option<serde_json::Value> {
        let entries = self.entries.lock().expect("cache poisoned");
        let value = entries.get(key).cloned();
        if value.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        value
    }

    pub fn put(
        &self,
        key: String,
        stage: Stage,
        payload: serde_json::Value,
    ) -> std::io::Result<()> {
        {
            let mut entries = self.entries.lock().expect("cache poisoned");
            if entries.contains_key(&key) {
                return Ok(());
            }
            entries.insert(key.clone(), payload.clone());
        }
        let entry = StageCacheEntry {
            key,
            stage,
            payload,
        };
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        serde_json::to_writer(&mut *writer, &entry)?;
        writer.write_all(b"\n")?;
        writer.flush()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
