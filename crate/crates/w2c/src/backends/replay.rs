//! Replay backend: a read-only lookup table of request key -> wire response,
//! plus recording wrappers that capture live responses into the same format.
//!
//! Replay files are JSONL, one `{"key": ..., "response": ...}` object per
//! line, shared by VLM and grounding entries (keys never collide across the
//! two because the key hash is domain-separated).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    grounding_request_key, grounding_response_from_wire, grounding_response_to_wire,
    vlm_request_key, vlm_response_from_wire, vlm_response_to_wire, BackendError, GroundingBackend,
    GroundingRequest, GroundingResponse, VlmBackend, VlmRequest, VlmResponse,
};

#[derive(Debug, Serialize, Deserialize)]
struct ReplayEntry {
    key: String,
    response: serde_json::Value,
}

/// Deterministic backend serving scripted responses by request key.
/// Repeated calls with equal requests return identical data.
pub struct ReplayBackend {
    entries: HashMap<String, serde_json::Value>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = HashMap::new();
        for (number, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("replay line {}: {e}", number + 1),
                )
            })?;
            entries.insert(entry.key, entry.response);
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, key: &str) -> Result<&serde_json::Value, BackendError> {
        self.entries
            .get(key)
            .ok_or_else(|| BackendError::ReplayMiss {
                key: key.to_string(),
            })
    }
}

impl VlmBackend for ReplayBackend {
    fn complete(&self, request: &VlmRequest) -> Result<VlmResponse, BackendError> {
        request.validate()?;
        let key = vlm_request_key(request);
        let value = self.lookup(&key)?.clone();
        let wire = serde_json::from_value(value).map_err(|e| BackendError::Contract {
            message: format!("replay entry {key} is not a VLM response: {e}"),
        })?;
        vlm_response_from_wire(wire, request)
    }
}

impl GroundingBackend for ReplayBackend {
    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, BackendError> {
        let key = grounding_request_key(request);
        let value = self.lookup(&key)?.clone();
        let wire = serde_json::from_value(value).map_err(|e| BackendError::Contract {
            message: format!("replay entry {key} is not a grounding response: {e}"),
        })?;
        grounding_response_from_wire(wire, request)
    }
}

/// Append-only replay file writer shared by the recording wrappers.
/// Duplicate keys are written once.
pub struct ReplayLog {
    inner: Mutex<ReplayLogInner>,
}

struct ReplayLogInner {
    writer: BufWriter<File>,
    seen: std::collections::HashSet<String>,
}

impl ReplayLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let writer = BufWriter::new(File::create(path)?);
        Ok(Self {
            inner: Mutex::new(ReplayLogInner {
                writer,
                seen: std::collections::HashSet::new(),
            }),
        })
    }

    fn record(&self, key: &str, response: serde_json::Value) -> std::io::Result<()> {
        let mut inner = self.inner.lock().expect("replay log poisoned");
        if !inner.seen.insert(key.to_string()) {
            return Ok(());
        }
        let entry = ReplayEntry {
            key: key.to_string(),
            response,
        };
        serde_json::to_writer(&mut inner.writer, &entry)?;
        inner.writer.write_all(b"\n")?;
        inner.writer.flush()
    }
}

/// Wraps a live VLM backend and records every successful response.
pub struct RecordingVlm<B> {
    pub inner: B,
    pub log: std::sync::Arc<ReplayLog>,
}

impl<B: VlmBackend> VlmBackend for RecordingVlm<B> {
    fn complete(&self, request: &VlmRequest) -> Result<VlmResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let key = vlm_request_key(request);
        let wire = serde_json::to_value(vlm_response_to_wire(&response))
            .expect("wire response serialization cannot fail");
        self.log.record(&key, wire)?;
        Ok(response)
    }
}

/// Wraps a live grounding backend and records every successful response.
pub struct RecordingGrounding<B> {
    pub inner: B,
    pub log: std::sync::Arc<ReplayLog>,
}

impl<B: GroundingBackend> GroundingBackend for RecordingGrounding<B> {
    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, BackendError> {
        let response = self.inner.ground(request)?;
        let key = grounding_request_key(request);
        let wire = serde_json::to_value(grounding_response_to_wire(&response))
            .expect("wire response serialization cannot fail");
        self.log.record(&key, wire)?;
        Ok(response)
    }
}
