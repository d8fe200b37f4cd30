//! HTTP clients for the VLM and grounding services.
//!
//! Both speak JSON over POST. Region queries are cropped client-side before
//! encoding, so the service only ever sees the pixels it is asked about.
//! Transient transport failures and 5xx statuses are retried with
//! exponential backoff; other statuses are contract errors.

use std::io::Cursor;
use std::time::Duration;

use base64::Engine;

use super::{
    grounding_response_from_wire, vlm_response_from_wire, BackendError, GroundingBackend,
    GroundingRequest, GroundingResponse, GroundingWireRequest, VlmBackend, VlmRequest, VlmResponse,
    VlmWireRequest, VlmWireResponse,
};
use crate::datamodel::BoundingBox;

/// Exponential backoff settings for transient failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    fn backoff_for(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        (self.initial_backoff * factor).min(self.max_backoff)
    }
}

struct HttpClient {
    agent: ureq::Agent,
    endpoint: String,
    bearer_token: Option<String>,
    retry: RetryPolicy,
}

impl HttpClient {
    fn new(endpoint: String, bearer_token: Option<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            agent,
            endpoint,
            bearer_token,
            retry,
        }
    }

    /// POSTs `body`, retrying transport errors and 5xx/429 responses.
    fn post_json(&self, body: &impl serde::Serialize) -> Result<serde_json::Value, BackendError> {
        let mut attempt = 0;
        loop {
            match self.try_post(body) {
                Ok(value) => return Ok(value),
                Err(PostError::Fatal(err)) => return Err(err),
                Err(PostError::Transient(message)) => {
                    if attempt >= self.retry.max_retries {
                        return Err(BackendError::Transport {
                            message,
                            attempts: attempt + 1,
                        });
                    }
                    std::thread::sleep(self.retry.backoff_for(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn try_post(&self, body: &impl serde::Serialize) -> Result<serde_json::Value, PostError> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(token) = &self.bearer_token {
            request = request.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| PostError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(PostError::Transient(format!("HTTP status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(PostError::Fatal(BackendError::Contract {
                message: format!("HTTP status {status}"),
            }));
        }
        response.body_mut().read_json().map_err(|e| {
            PostError::Fatal(BackendError::Contract {
                message: format!("response body is not JSON: {e}"),
            })
        })
    }
}

enum PostError {
    Transient(String),
    Fatal(BackendError),
}

/// Decodes the image, crops the requested box, and returns base64 bytes.
/// Full-image requests pass the original file bytes through untouched.
fn encode_image(
    request_image: &super::ImageSource,
    crop: Option<&BoundingBox>,
) -> Result<String, BackendError> {
    let engine = base64::engine::general_purpose::STANDARD;
    let Some(bbox) = crop else {
        return Ok(engine.encode(request_image.bytes()));
    };
    let decoded =
        image::load_from_memory(request_image.bytes()).map_err(|e| BackendError::Contract {
            message: format!("image {} does not decode: {e}", request_image.record.id),
        })?;
    let cropped = decoded.crop_imm(
        bbox.x1 as u32,
        bbox.y1 as u32,
        bbox.width() as u32,
        bbox.height() as u32,
    );
    let mut buffer = Vec::new();
    cropped
        .write_to(&mut Cursor::new(&mut buffer), image::ImageFormat::Png)
        .map_err(|e| BackendError::Contract {
            message: format!("crop re-encode failed: {e}"),
        })?;
    Ok(engine.encode(&buffer))
}

/// Chat-completion-style VLM client: `{"prompt","image_b64","num_beams"}`
/// in, `{"candidates": [...]}` out.
pub struct HttpVlmBackend {
    client: HttpClient,
}

impl HttpVlmBackend {
    pub fn new(
        endpoint: impl Into<String>,
        bearer_token: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            client: HttpClient::new(endpoint.into(), bearer_token, retry),
        }
    }
}

impl VlmBackend for HttpVlmBackend {
    fn complete(&self, request: &VlmRequest) -> Result<VlmResponse, BackendError> {
        request.validate()?;
        let wire_request = VlmWireRequest {
            prompt: &request.prompt,
            image_b64: encode_image(&request.image, request.crop.as_ref())?,
            num_beams: request.beam_width,
        };
        let value = self.client.post_json(&wire_request)?;
        let wire: VlmWireResponse =
            serde_json::from_value(value).map_err(|e| BackendError::Contract {
                message: format!("malformed VLM response: {e}"),
            })?;
        vlm_response_from_wire(wire, request)
    }
}

/// Grounding client: `{"image_b64","phrases","box_threshold","text_threshold"}`
/// in, `{"detections": [{"phrase","box","score"}]}` out.
pub struct HttpGroundingBackend {
    client: HttpClient,
}

impl HttpGroundingBackend {
    pub fn new(
        endpoint: impl Into<String>,
        bearer_token: Option<String>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            client: HttpClient::new(endpoint.into(), bearer_token, retry),
        }
    }
}

impl GroundingBackend for HttpGroundingBackend {
    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, BackendError> {
        if request.phrases.is_empty() {
            return Err(BackendError::Contract {
                message: "grounding request must carry at least one phrase".into(),
            });
        }
        let wire_request = GroundingWireRequest {
            image_b64: encode_image(&request.image, None)?,
            phrases: &request.phrases,
            box_threshold: request.box_threshold,
            text_threshold: request.text_threshold,
        };
        let value = self.client.post_json(&wire_request)?;
        let wire = serde_json::from_value(value).map_err(|e| BackendError::Contract {
            message: format!("malformed grounding response: {e}"),
        })?;
        grounding_response_from_wire(wire, request)
    }
}
