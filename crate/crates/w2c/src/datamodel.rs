//! Domain types and pipeline configuration shared by every stage.
//!
//! All types here are immutable value objects after construction and are
//! safe to share between worker threads.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// One raw image: identity, file location, and pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, path: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            width,
            height,
        }
    }
}

/// Axis-aligned box in absolute pixel coordinates, `[x1, y1, x2, y2]` order.
///
/// A well-formed box satisfies `0 <= x1 < x2` and `0 <= y1 < y2`, and fits
/// inside the owning image. Fields are public so that deserialized data can
/// be inspected by [`validate_record`] before being trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl BoundingBox {
    /// Checked constructor: rejects negative or degenerate extents.
    pub fn try_new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, String> {
        let b = Self { x1, y1, x2, y2 };
        match b.check() {
            Some(problem) => Err(problem),
            None => Ok(b),
        }
    }

    /// Unchecked constructor for wire data; pair with [`BoundingBox::check`].
    pub fn raw(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Returns a description of the first violated invariant, if any.
    pub fn check(&self) -> Option<String> {
        if self.x1 < 0 || self.y1 < 0 {
            return Some(format!("negative box origin {self}"));
        }
        if self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Some(format!("degenerate box {self}"));
        }
        None
    }

    /// True when the box is well-formed and lies inside a `width` x `height` image.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.check().is_none() && self.x2 <= i64::from(width) && self.y2 <= i64::from(height)
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    /// Smallest box containing both `self` and `other`.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> i64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0 || h <= 0 {
            0
        } else {
            w * h
        }
    }

    /// Intersection over union; 0.0 for disjoint or zero-area boxes.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }

    pub fn as_array(&self) -> [i64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl std::fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// A chunked noun phrase: the surface form as it appeared plus its
/// normalized (lowercased, lemmatized, determiner-stripped) form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NounPhrase {
    pub surface: String,
    pub normalized: String,
}

/// A grounded noun phrase: normalized name, box, and detector confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedConcept {
    pub name: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Consistency status of a concept group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Unchecked,
    Consistent,
    Inconsistent,
}

/// Parsed yes/no validation answer. Unanswerable replies stay `Unknown`
/// rather than being coerced either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum YesNo {
    Yes,
    No,
    Unknown,
}

/// Same-name concepts merged into one group with a union box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub name: String,
    pub members: Vec<DetectedConcept>,
    pub count: usize,
    pub merged_box: BoundingBox,
    pub verdict: Verdict,
}

/// One beam-search region caption with its extracted sub-concepts and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionCandidate {
    pub text: String,
    pub beam_index: usize,
    pub sub_concepts: Vec<(NounPhrase, YesNo)>,
    pub score: i64,
}

impl CaptionCandidate {
    pub fn new(text: impl Into<String>, beam_index: usize) -> Self {
        Self {
            text: text.into(),
            beam_index,
            sub_concepts: Vec::new(),
            score: 0,
        }
    }
}

/// Final per-concept annotation: selected caption, optional OCR text, box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptAnnotation {
    pub name: String,
    pub caption: String,
    pub text: Option<String>,
    pub bbox: BoundingBox,
}

/// A named group of annotations inside a finished record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedGroup {
    pub name: String,
    pub items: Vec<ConceptAnnotation>,
}

/// The final structured annotation for one image, plus its emitted code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2CRecord {
    pub image: ImageRecord,
    pub global_caption: String,
    pub groups: Vec<AnnotatedGroup>,
    pub code: String,
}

/// What to do with a record when a group fails the counting filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropPolicy {
    /// Any inconsistent group drops the whole record.
    #[serde(rename = "record")]
    DropRecord,
    /// Only the inconsistent groups are removed; the record survives if at
    /// least one group remains.
    #[serde(rename = "group")]
    DropGroup,
}

/// Serialization format for the emitted dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    #[serde(rename = "code")]
    Code,
    #[serde(rename = "single")]
    SingleRound,
    #[serde(rename = "multi")]
    MultiRound,
}

/// Knobs for one pipeline run. All thresholds live in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Beam width for caption generation calls.
    pub beam_width: usize,
    pub detector_box_threshold: f64,
    pub detector_text_threshold: f64,
    /// Same-phrase detections above this IoU collapse to the most confident one.
    pub duplicate_iou_threshold: f64,
    /// Fractional padding applied to a concept box before cropping.
    pub crop_pad_fraction: f64,
    pub counting_filter_enabled: bool,
    pub reranking_enabled: bool,
    pub drop_policy: DropPolicy,
    pub output_format: OutputFormat,
    pub max_concurrent_requests: usize,
    /// Normalized phrases excluded from concept extraction.
    pub stoplist: BTreeSet<String>,
    /// How many global/detail caption beams feed phrase extraction.
    pub global_phrase_beams: usize,
}

/// Caption meta-words that never name a visual concept.
pub const DEFAULT_STOPLIST: [&str; 8] = [
    "image",
    "picture",
    "photo",
    "background",
    "scene",
    "view",
    "side",
    "part",
];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beam_width: 4,
            detector_box_threshold: 0.35,
            detector_text_threshold: 0.25,
            duplicate_iou_threshold: 0.9,
            crop_pad_fraction: 0.0,
            counting_filter_enabled: true,
            reranking_enabled: true,
            drop_policy: DropPolicy::DropRecord,
            output_format: OutputFormat::Code,
            max_concurrent_requests: 4,
            stoplist: DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect(),
            global_phrase_beams: 1,
        }
    }
}

impl PipelineConfig {
    /// Rejects out-of-range thresholds and zero worker or beam counts.
    pub fn validate(&self) -> Result<(), String> {
        fn unit(name: &str, v: f64) -> Result<(), String> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must be within [0, 1], got {v}"))
            }
        }
        if self.beam_width == 0 {
            return Err("beam_width must be >= 1".into());
        }
        if self.max_concurrent_requests == 0 {
            return Err("max_concurrent_requests must be >= 1".into());
        }
        if self.global_phrase_beams == 0 {
            return Err("global_phrase_beams must be >= 1".into());
        }
        unit("detector_box_threshold", self.detector_box_threshold)?;
        unit("detector_text_threshold", self.detector_text_threshold)?;
        unit("duplicate_iou_threshold", self.duplicate_iou_threshold)?;
        if self.crop_pad_fraction < 0.0 {
            return Err(format!(
                "crop_pad_fraction must be >= 0, got {}",
                self.crop_pad_fraction
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSONL output schema
// ---------------------------------------------------------------------------

/// One output line. Key order is pinned by field order so golden files are
/// byte-stable: `{"id","global_caption","groups",...,"code"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub id: String,
    pub global_caption: String,
    pub groups: Vec<JsonlGroup>,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlGroup {
    pub name: String,
    pub items: Vec<JsonlItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlItem {
    pub caption: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub bbox: [i64; 4],
}

impl W2CRecord {
    /// Projects this record onto the JSONL output schema.
    pub fn to_jsonl(&self) -> JsonlRecord {
        JsonlRecord {
            id: self.image.id.clone(),
            global_caption: self.global_caption.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| JsonlGroup {
                    name: g.name.clone(),
                    items: g
                        .items
                        .iter()
                        .map(|a| JsonlItem {
                            caption: a.caption.clone(),
                            text: a.text.clone(),
                            bbox: a.bbox.as_array(),
                        })
                        .collect(),
                })
                .collect(),
            code: self.code.clone(),
        }
    }

    /// Serializes one JSONL line (no trailing newline).
    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(&self.to_jsonl()).expect("record serialization cannot fail")
    }
}

impl JsonlRecord {
    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// Rebuilds the in-memory groups carried by this line. Annotation names
    /// are taken from their group, mirroring `W2CRecord::to_jsonl`.
    pub fn to_groups(&self) -> Vec<AnnotatedGroup> {
        self.groups
            .iter()
            .map(|g| AnnotatedGroup {
                name: g.name.clone(),
                items: g
                    .items
                    .iter()
                    .map(|i| ConceptAnnotation {
                        name: g.name.clone(),
                        caption: i.caption.clone(),
                        text: i.text.clone(),
                        bbox: BoundingBox::raw(i.bbox[0], i.bbox[1], i.bbox[2], i.bbox[3]),
                    })
                    .collect(),
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Record validation
// ---------------------------------------------------------------------------

/// Checks every type invariant on a finished record, including that the
/// `code` field parses back to the same structured content.
///
/// Violations are returned as data; an empty list means the record is valid.
pub fn validate_record(record: &W2CRecord) -> Vec<String> {
    let mut violations = Vec::new();

    if record.image.id.is_empty() {
        violations.push("image id is empty".to_string());
    }
    if record.image.width == 0 || record.image.height == 0 {
        violations.push(format!(
            "image dimensions must be positive, got {}x{}",
            record.image.width, record.image.height
        ));
    }
    if record.global_caption.trim().is_empty() {
        violations.push("global caption is empty".to_string());
    }

    let mut seen_names = BTreeSet::new();
    for group in &record.groups {
        if group.name.is_empty() {
            violations.push("group with empty name".to_string());
        }
        if !seen_names.insert(group.name.as_str()) {
            violations.push(format!("duplicate group name {:?}", group.name));
        }
        if group.items.is_empty() {
            violations.push(format!("group {:?} has no annotations", group.name));
        }
        for annotation in &group.items {
            if annotation.name != group.name {
                violations.push(format!(
                    "annotation name {:?} differs from group name {:?}",
                    annotation.name, group.name
                ));
            }
            if annotation.caption.trim().is_empty() {
                violations.push(format!("empty caption in group {:?}", group.name));
            }
            if let Some(text) = &annotation.text {
                if text.trim().is_empty() {
                    violations.push(format!(
                        "blank OCR text in group {:?}; absent text must be omitted",
                        group.name
                    ));
                }
            }
            if let Some(problem) = annotation.bbox.check() {
                violations.push(format!("group {:?}: {problem}", group.name));
            } else if !annotation
                .bbox
                .fits_within(record.image.width, record.image.height)
            {
                violations.push(format!(
                    "group {:?}: box {} exceeds image bounds {}x{}",
                    group.name, annotation.bbox, record.image.width, record.image.height
                ));
            }
        }
    }

    match crate::codegen::parse_code(&record.code) {
        Ok(content) => {
            if content != crate::codegen::CodeContent::of_record(record) {
                violations.push("code/structure mismatch".to_string());
            }
        }
        Err(err) => violations.push(format!("code does not parse: {err}")),
    }

    violations
}
