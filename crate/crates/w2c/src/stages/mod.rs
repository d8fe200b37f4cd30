//! Generation stages: global/detail captions, concept grounding with
//! duplicate-box suppression, region captions, and OCR extraction.

pub mod prompts;

pub use prompts::{PromptName, PromptSet};

use std::collections::HashSet;

use crate::backends::{
    BackendError, GroundingBackend, GroundingRequest, ImageSource, VlmBackend, VlmRequest,
};
use crate::datamodel::{BoundingBox, CaptionCandidate, DetectedConcept, PipelineConfig};
use crate::nlp;

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("backend produced no usable text for {stage}")]
    EmptyGeneration { stage: &'static str },
}

/// Top-beam general and detail captions, with the full beam lists kept for
/// phrase extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalCaptions {
    pub general: String,
    pub detail: String,
    pub general_beams: Vec<String>,
    pub detail_beams: Vec<String>,
}

/// Expands a box by `pad` times its own width/height on each side, then
/// clamps to the image. Pad 0 is the identity; the result always contains
/// the original box.
pub fn pad_crop(bbox: &BoundingBox, pad: f64, width: u32, height: u32) -> BoundingBox {
    let pad_w = (pad * bbox.width() as f64).round() as i64;
    let pad_h = (pad * bbox.height() as f64).round() as i64;
    BoundingBox {
        x1: (bbox.x1 - pad_w).max(0),
        y1: (bbox.y1 - pad_h).max(0),
        x2: (bbox.x2 + pad_w).min(i64::from(width)),
        y2: (bbox.y2 + pad_h).min(i64::from(height)),
    }
}

fn top_nonempty(candidates: &[String], stage: &'static str) -> Result<String, StageError> {
    let top = candidates.first().map(|s| s.trim()).unwrap_or("");
    if top.is_empty() {
        return Err(StageError::EmptyGeneration { stage });
    }
    Ok(top.to_string())
}

/// Generates the general and detail captions for the full image.
pub fn gen_global_captions(
    image: &ImageSource,
    config: &PipelineConfig,
    prompts: &PromptSet,
    vlm: &dyn VlmBackend,
) -> Result<GlobalCaptions, StageError> {
    let general = vlm.complete(&VlmRequest::full_image(
        image.clone(),
        prompts.global.clone(),
        config.beam_width,
    ))?;
    let detail = vlm.complete(&VlmRequest::full_image(
        image.clone(),
        prompts.detail.clone(),
        config.beam_width,
    ))?;
    Ok(GlobalCaptions {
        general: top_nonempty(&general.candidates, "global caption")?,
        detail: top_nonempty(&detail.candidates, "detail caption")?,
        general_beams: general.candidates,
        detail_beams: detail.candidates,
    })
}

/// Extracts noun phrases from the captions, grounds them, and collapses
/// near-duplicate boxes per phrase to the most confident detection.
///
/// Phrases that ground to nothing are simply absent from the output; an
/// empty result means the image carries no usable concept.
pub fn extract_concepts(
    image: &ImageSource,
    captions: &GlobalCaptions,
    config: &PipelineConfig,
    grounding: &dyn GroundingBackend,
) -> Result<Vec<DetectedConcept>, StageError> {
    let stoplist: HashSet<String> = config.stoplist.iter().cloned().collect();
    let beams = config.global_phrase_beams;
    let mut all_phrases = Vec::new();
    for text in captions
        .general_beams
        .iter()
        .take(beams)
        .chain(captions.detail_beams.iter().take(beams))
    {
        all_phrases.extend(nlp::extract_noun_phrases(text));
    }
    let phrases = nlp::dedup_phrases(&all_phrases, &stoplist);
    if phrases.is_empty() {
        return Ok(Vec::new());
    }

    let response = grounding.ground(&GroundingRequest {
        image: image.clone(),
        phrases: phrases.iter().map(|p| p.normalized.clone()).collect(),
        box_threshold: config.detector_box_threshold,
        text_threshold: config.detector_text_threshold,
    })?;

    let mut concepts = Vec::new();
    for phrase in &phrases {
        let mut detections: Vec<&DetectedConcept> = response
            .detections
            .iter()
            .filter(|d| d.name == phrase.normalized)
            .collect();
        detections.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.bbox.x1.cmp(&b.bbox.x1))
                .then(a.bbox.y1.cmp(&b.bbox.y1))
        });
        let mut kept: Vec<DetectedConcept> = Vec::new();
        for det in detections {
            if kept
                .iter()
                .all(|k| k.bbox.iou(&det.bbox) <= config.duplicate_iou_threshold)
            {
                kept.push(det.clone());
            }
        }
        concepts.extend(kept);
    }
    Ok(concepts)
}

/// Generates beam-width region caption candidates for one concept's crop.
/// Duplicate texts collapse to the lowest beam index; blank beams drop.
pub fn gen_region_captions(
    image: &ImageSource,
    concept: &DetectedConcept,
    config: &PipelineConfig,
    prompts: &PromptSet,
    vlm: &dyn VlmBackend,
) -> Result<Vec<CaptionCandidate>, StageError> {
    let crop = pad_crop(
        &concept.bbox,
        config.crop_pad_fraction,
        image.record.width,
        image.record.height,
    );
    let response = vlm.complete(&VlmRequest::cropped(
        image.clone(),
        crop,
        prompts.render_region_desc(&concept.name),
        config.beam_width,
    ))?;

    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for (beam_index, text) in response.candidates.iter().enumerate() {
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        if seen.insert(text.to_string()) {
            candidates.push(CaptionCandidate::new(text, beam_index));
        }
    }
    if candidates.is_empty() {
        return Err(StageError::EmptyGeneration {
            stage: "region caption",
        });
    }
    Ok(candidates)
}

/// Asks for OCR text in the concept's crop. A bare "no" answer (any case,
/// trailing punctuation ignored) means no text was found.
pub fn extract_ocr(
    image: &ImageSource,
    concept: &DetectedConcept,
    prompts: &PromptSet,
    vlm: &dyn VlmBackend,
) -> Result<Option<String>, StageError> {
    let response = vlm.complete(&VlmRequest::cropped(
        image.clone(),
        concept.bbox,
        prompts.ocr.clone(),
        1,
    ))?;
    let answer = response.top().trim();
    let bare = answer.trim_end_matches(['.', '!', ',', ' ']);
    if bare.eq_ignore_ascii_case("no") {
        return Ok(None);
    }
    if answer.is_empty() {
        return Ok(None);
    }
    Ok(Some(answer.to_string()))
}
