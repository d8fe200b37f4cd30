//! Wire contracts for the two model services (vision-language model and
//! phrase-grounding detector), plus a deterministic replay backend and a
//! recording wrapper for capturing fixtures from live services.
//!
//! Backends are object-safe traits so callers stay agnostic of whether
//! responses come from HTTP, a replay file, or a test closure.

mod http;
mod replay;

pub use http::{HttpGroundingBackend, HttpVlmBackend, RetryPolicy};
pub use replay::{RecordingGrounding, RecordingVlm, ReplayBackend, ReplayLog};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{BoundingBox, DetectedConcept, ImageRecord, YesNo};

/// An image with its raw file bytes and content digest, loaded once and
/// shared by every request touching that image.
#[derive(Debug, Clone)]
pub struct ImageSource {
    pub record: ImageRecord,
    bytes: Arc<Vec<u8>>,
    digest: String,
}

impl ImageSource {
    pub fn from_bytes(record: ImageRecord, bytes: Vec<u8>) -> Self {
        let digest = hex::encode(Sha256::digest(&bytes));
        Self {
            record,
            bytes: Arc::new(bytes),
            digest,
        }
    }

    /// Reads the file at `path`, which may differ from `record.path` when
    /// manifest paths are relative to a base directory.
    pub fn from_file(record: ImageRecord, path: &std::path::Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(record, bytes))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Hex SHA-256 of the raw file bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

/// One VLM call: a prompt over the full image or a crop of it.
#[derive(Debug, Clone)]
pub struct VlmRequest {
    pub image: ImageSource,
    /// Absent means the full image.
    pub crop: Option<BoundingBox>,
    pub prompt: String,
    pub beam_width: usize,
}

impl VlmRequest {
    pub fn full_image(image: ImageSource, prompt: impl Into<String>, beam_width: usize) -> Self {
        Self {
            image,
            crop: None,
            prompt: prompt.into(),
            beam_width,
        }
    }

    pub fn cropped(
        image: ImageSource,
        crop: BoundingBox,
        prompt: impl Into<String>,
        beam_width: usize,
    ) -> Self {
        Self {
            image,
            crop: Some(crop),
            prompt: prompt.into(),
            beam_width,
        }
    }

    /// Rejects crops that do not fit the image and zero beam widths.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.beam_width == 0 {
            return Err(BackendError::Contract {
                message: "beam_width must be >= 1".into(),
            });
        }
        if let Some(crop) = &self.crop {
            if !crop.fits_within(self.image.record.width, self.image.record.height) {
                return Err(BackendError::Contract {
                    message: format!(
                        "crop {crop} outside image {}x{}",
                        self.image.record.width, self.image.record.height
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Beam-ordered generation output; index 0 is the backend's top beam.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub candidates: Vec<String>,
}

impl VlmResponse {
    pub fn top(&self) -> &str {
        &self.candidates[0]
    }
}

/// One grounding call: map normalized phrases to boxes in an image.
#[derive(Debug, Clone)]
pub struct GroundingRequest {
    pub image: ImageSource,
    pub phrases: Vec<String>,
    pub box_threshold: f64,
    pub text_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResponse {
    pub detections: Vec<DetectedConcept>,
}

/// Errors surfaced by any backend implementation.
#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("no replay entry for request key {key}")]
    ReplayMiss { key: String },
    #[error("service contract violation: {message}")]
    Contract { message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub trait VlmBackend: Send + Sync {
    fn complete(&self, request: &VlmRequest) -> Result<VlmResponse, BackendError>;
}

pub trait GroundingBackend: Send + Sync {
    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, BackendError>;
}

impl<F> VlmBackend for F
where
    F: Fn(&VlmRequest) -> Result<VlmResponse, BackendError> + Send + Sync,
{
    fn complete(&self, request: &VlmRequest) -> Result<VlmResponse, BackendError> {
        self(request)
    }
}

impl<F> GroundingBackend for F
where
    F: Fn(&GroundingRequest) -> Result<GroundingResponse, BackendError> + Send + Sync,
{
    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, BackendError> {
        self(request)
    }
}

// ---------------------------------------------------------------------------
// Request keys
// ---------------------------------------------------------------------------

/// Stable hash for a VLM request: image content digest, crop, beam width,
/// and prompt. Equal requests hash equal; any field change changes the key.
pub fn vlm_request_key(request: &VlmRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"vlm\x1e");
    hasher.update(request.image.digest().as_bytes());
    hasher.update(b"\x1e");
    match &request.crop {
        None => hasher.update(b"full"),
        Some(b) => hasher.update(format!("{},{},{},{}", b.x1, b.y1, b.x2, b.y2).as_bytes()),
    }
    hasher.update(b"\x1e");
    hasher.update(request.beam_width.to_string().as_bytes());
    hasher.update(b"\x1e");
    hasher.update(request.prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Stable hash for a grounding request: image digest, thresholds, phrases.
pub fn grounding_request_key(request: &GroundingRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"ground\x1e");
    hasher.update(request.image.digest().as_bytes());
    hasher.update(b"\x1e");
    hasher.update(format!("{}", request.box_threshold).as_bytes());
    hasher.update(b"\x1e");
    hasher.update(format!("{}", request.text_threshold).as_bytes());
    for phrase in &request.phrases {
        hasher.update(b"\x1f");
        hasher.update(phrase.as_bytes());
    }
    hex::encode(hasher.finalize())
}

// ---------------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub(crate) struct VlmWireRequest<'a> {
    pub prompt: &'a str,
    pub image_b64: String,
    pub num_beams: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct VlmWireResponse {
    pub candidates: Vec<String>,
}

#[derive(Debug, Serialize)]
pub(crate) struct GroundingWireRequest<'a> {
    pub image_b64: String,
    pub phrases: &'a [String],
    pub box_threshold: f64,
    pub text_threshold: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct GroundingWireResponse {
    pub detections: Vec<GroundingWireDetection>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct GroundingWireDetection {
    pub phrase: String,
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    pub score: f64,
}

/// Validates a wire VLM response against its request.
pub(crate) fn vlm_response_from_wire(
    wire: VlmWireResponse,
    _request: &VlmRequest,
) -> Result<VlmResponse, BackendError> {
    if wire.candidates.is_empty() {
        return Err(BackendError::Contract {
            message: "VLM response carried no candidates".into(),
        });
    }
    Ok(VlmResponse {
        candidates: wire.candidates,
    })
}

/// Validates a wire grounding response against its request: detection names
/// must come from the requested phrases and boxes must fit the image.
/// Detections whose score clears neither threshold are filtered out, which
/// is how phrases that fail to ground simply vanish from the result.
pub(crate) fn grounding_response_from_wire(
    wire: GroundingWireResponse,
    request: &GroundingRequest,
) -> Result<GroundingResponse, BackendError> {
    let mut detections = Vec::new();
    for det in wire.detections {
        if !request.phrases.contains(&det.phrase) {
            return Err(BackendError::Contract {
                message: format!("detection phrase {:?} was never requested", det.phrase),
            });
        }
        if !(0.0..=1.0).contains(&det.score) {
            return Err(BackendError::Contract {
                message: format!("detection score {} outside [0, 1]", det.score),
            });
        }
        let bbox = BoundingBox::raw(det.bbox[0], det.bbox[1], det.bbox[2], det.bbox[3]);
        if !bbox.fits_within(request.image.record.width, request.image.record.height) {
            return Err(BackendError::Contract {
                message: format!(
                    "detection box {bbox} outside image {}x{}",
                    request.image.record.width, request.image.record.height
                ),
            });
        }
        // The wire carries one score; both thresholds gate on it.
        if det.score < request.box_threshold || det.score < request.text_threshold {
            continue;
        }
        detections.push(DetectedConcept {
            name: det.phrase,
            bbox,
            confidence: det.score,
        });
    }
    Ok(GroundingResponse { detections })
}

pub(crate) fn vlm_response_to_wire(response: &VlmResponse) -> VlmWireResponse {
    VlmWireResponse {
        candidates: response.candidates.clone(),
    }
}

pub(crate) fn grounding_response_to_wire(response: &GroundingResponse) -> GroundingWireResponse {
    GroundingWireResponse {
        detections: response
            .detections
            .iter()
            .map(|d| GroundingWireDetection {
                phrase: d.name.clone(),
                bbox: d.bbox.as_array(),
                score: d.confidence,
            })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Answer parsing
// ---------------------------------------------------------------------------

/// Classifies a validation answer by its first word, case-insensitively and
/// ignoring punctuation. Total: every string maps to Yes, No, or Unknown.
pub fn parse_yes_no(answer: &str) -> YesNo {
    let first_word: String = answer
        .chars()
        .skip_while(|c| !c.is_alphanumeric())
        .take_while(|c| c.is_alphanumeric())
        .collect();
    if first_word.eq_ignore_ascii_case("yes") {
        YesNo::Yes
    } else if first_word.eq_ignore_ascii_case("no") {
        YesNo::No
    } else {
        YesNo::Unknown
    }
}
