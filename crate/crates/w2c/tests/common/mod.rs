//! Shared fixtures for integration tests: scripted backends, replay corpus
//! construction, a deterministic RNG, and a valid-record generator.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use w2c::backends::{
    BackendError, GroundingBackend, GroundingRequest, GroundingResponse, RecordingGrounding,
    RecordingVlm, ReplayLog, VlmBackend, VlmRequest, VlmResponse,
};
use w2c::datamodel::{
    AnnotatedGroup, BoundingBox, ConceptAnnotation, DetectedConcept, ImageRecord, PipelineConfig,
    W2CRecord,
};
use w2c::orchestrator::{run_pipeline, PipelineBackends};
use w2c::stages::prompts;
use w2c::PromptSet;

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix-style) for reproducible random tests
// ---------------------------------------------------------------------------

pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed.wrapping_add(0x9e3779b97f4a7c15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound.max(1)
    }

    pub fn range_i64(&mut self, low: i64, high: i64) -> i64 {
        low + self.below((high - low) as u64) as i64
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }

    pub fn chance(&mut self, numerator: u64, denominator: u64) -> bool {
        self.below(denominator) < numerator
    }
}

// ---------------------------------------------------------------------------
// Scripted backend: answers by image id and prompt shape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ScriptedImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub general: String,
    pub detail: String,
    /// Grounding reply: (normalized phrase, box, score).
    pub detections: Vec<(String, BoundingBox, f64)>,
    /// Region caption beams per concept name.
    pub region_beams: HashMap<String, Vec<String>>,
    /// OCR answer per concept name; missing means "No".
    pub ocr: HashMap<String, String>,
    /// Counting answer per group name; missing means "Yes".
    pub counting: HashMap<String, String>,
    /// Validation answer per sub-concept phrase; missing means "maybe".
    pub validation: HashMap<String, String>,
}

impl ScriptedImage {
    pub fn new(id: &str, width: u32, height: u32) -> Self {
        Self {
            id: id.to_string(),
            width,
            height,
            ..Self::default()
        }
    }

    pub fn file_bytes(&self) -> Vec<u8> {
        format!("w2c-test-image:{}", self.id).into_bytes()
    }

    pub fn record(&self, file_name: &str) -> ImageRecord {
        ImageRecord::new(self.id.clone(), file_name, self.width, self.height)
    }
}

pub struct ScriptedWorld {
    pub images: HashMap<String, ScriptedImage>,
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let to = text[from..].find(end)? + from;
    Some(&text[from..to])
}

impl VlmBackend for ScriptedWorld {
    fn complete(&self, request: &VlmRequest) -> Result<VlmResponse, BackendError> {
        let image = self
            .images
            .get(&request.image.record.id)
            .unwrap_or_else(|| panic!("unscripted image {}", request.image.record.id));
        let prompt = request.prompt.as_str();
        let candidates: Vec<String> = if prompt == prompts::DEFAULT_GLOBAL {
            vec![image.general.clone()]
        } else if prompt == prompts::DEFAULT_DETAIL {
            vec![image.detail.clone()]
        } else if prompt == prompts::DEFAULT_OCR {
            let crop = request.crop.expect("ocr request carries a crop");
            let name = image
                .detections
                .iter()
                .find(|(_, bbox, _)| *bbox == crop)
                .map(|(name, _, _)| name.clone())
                .unwrap_or_else(|| panic!("ocr crop {crop} matches no scripted box"));
            vec![image.ocr.get(&name).cloned().unwrap_or_else(|| "No".into())]
        } else if let Some(phrase) = between(prompt, "Is '", "' a valid") {
            vec![image
                .validation
                .get(phrase)
                .cloned()
                .unwrap_or_else(|| "maybe".into())]
        } else if let Some(name) = between(prompt, " or more ", " in the image") {
            vec![image
                .counting
                .get(name)
                .cloned()
                .unwrap_or_else(|| "Yes".into())]
        } else if let Some(name) = between(prompt, "describes ", " (you") {
            image
                .region_beams
                .get(name)
                .unwrap_or_else(|| panic!("no region beams scripted for {name:?} in {}", image.id))
                .clone()
        } else {
            panic!("unscripted prompt: {prompt}");
        };
        Ok(VlmResponse { candidates })
    }
}

impl GroundingBackend for ScriptedWorld {
    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, BackendError> {
        let image = self
            .images
            .get(&request.image.record.id)
            .unwrap_or_else(|| panic!("unscripted image {}", request.image.record.id));
        Ok(GroundingResponse {
            detections: image
                .detections
                .iter()
                .filter(|(name, _, _)| request.phrases.contains(name))
                .map(|(name, bbox, score)| DetectedConcept {
                    name: name.clone(),
                    bbox: *bbox,
                    confidence: *score,
                })
                .collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Corpus construction: files + manifest + recorded replay
// ---------------------------------------------------------------------------

pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub replay: PathBuf,
    pub images: Vec<ScriptedImage>,
}

/// Writes image files and a manifest, then captures a replay file by running
/// the full pipeline against the scripted backends in record mode (with both
/// filters enabled, so the replay covers every filter configuration).
pub fn build_corpus(dir: &Path, images: Vec<ScriptedImage>, config: &PipelineConfig) -> Corpus {
    let manifest = dir.join("manifest.jsonl");
    let mut manifest_lines = String::new();
    for image in &images {
        let file_name = format!("{}.bin", image.id);
        std::fs::write(dir.join(&file_name), image.file_bytes()).unwrap();
        manifest_lines.push_str(&serde_json::to_string(&image.record(&file_name)).unwrap());
        manifest_lines.push('\n');
    }
    std::fs::write(&manifest, manifest_lines).unwrap();

    let world = ScriptedWorld {
        images: images
            .iter()
            .map(|img| (img.id.clone(), img.clone()))
            .collect(),
    };
    let replay = dir.join("replay.jsonl");
    let log = Arc::new(ReplayLog::create(&replay).unwrap());
    let vlm = RecordingVlm {
        inner: |req: &VlmRequest| world.complete(req),
        log: Arc::clone(&log),
    };
    let grounding = RecordingGrounding {
        inner: |req: &GroundingRequest| world.ground(req),
        log,
    };
    let mut record_config = config.clone();
    record_config.counting_filter_enabled = true;
    record_config.reranking_enabled = true;
    let record_out = dir.join("record_run");
    let summary = run_pipeline(
        &manifest,
        &record_config,
        &PromptSet::default(),
        PipelineBackends {
            vlm: &vlm,
            grounding: &grounding,
        },
        &record_out,
        false,
    )
    .expect("recording pass");
    assert_eq!(
        summary.stats.images_errored, 0,
        "scripted corpus must record without errors"
    );

    Corpus {
        dir: dir.to_path_buf(),
        manifest,
        replay,
        images,
    }
}

// ---------------------------------------------------------------------------
// Ready-made corpora
// ---------------------------------------------------------------------------

/// One group per image; `failing` of them answer "No" to the counting prompt.
pub fn counting_corpus(total: usize, failing: usize) -> Vec<ScriptedImage> {
    (0..total)
        .map(|i| {
            let mut img = ScriptedImage::new(&format!("count-{i:03}"), 640, 480);
            img.general = "A dog.".into();
            img.detail = "Two dogs.".into();
            img.detections = vec![
                ("dog".into(), BoundingBox::raw(10, 10, 200, 200), 0.9),
                ("dog".into(), BoundingBox::raw(240, 40, 420, 230), 0.8),
            ];
            img.region_beams.insert(
                "dog".into(),
                vec!["dog resting on the grass".into(), "dog near a tree".into()],
            );
            img.validation.insert("dog".into(), "Yes".into());
            img.validation.insert("grass".into(), "Yes".into());
            img.validation.insert("tree".into(), "No".into());
            let answer = if i < failing { "No" } else { "Yes" };
            img.counting.insert("dog".into(), answer.into());
            img
        })
        .collect()
}

/// A small varied corpus: multi-member groups, OCR text, names with spaces,
/// a unicode caption, an image with no groundable phrase, and one that the
/// counting filter rejects.
pub fn golden_corpus() -> Vec<ScriptedImage> {
    let mut images = Vec::new();

    // Two dogs and a bench; re-ranking prefers beam 1 for dogs.
    let mut g0 = ScriptedImage::new("golden-00", 640, 480);
    g0.general = "Two dogs near a bench.".into();
    g0.detail = "Two dogs sit near a wooden bench.".into();
    g0.detections = vec![
        ("dog".into(), BoundingBox::raw(10, 40, 200, 260), 0.92),
        ("dog".into(), BoundingBox::raw(230, 60, 400, 270), 0.85),
        ("bench".into(), BoundingBox::raw(40, 250, 600, 460), 0.77),
    ];
    g0.region_beams.insert(
        "dog".into(),
        vec![
            "dog with a unicorn horn".into(),
            "dog with brown fur".into(),
            "dog".into(),
        ],
    );
    g0.region_beams.insert(
        "bench".into(),
        vec![
            "bench made of dark wood".into(),
            "bench with a dragon carving".into(),
        ],
    );
    g0.ocr.insert("bench".into(), "CITY PARK".into());
    g0.validation.insert("dog".into(), "Yes".into());
    g0.validation.insert("unicorn horn".into(), "No".into());
    g0.validation.insert("brown fur".into(), "Yes".into());
    g0.validation.insert("bench".into(), "Yes".into());
    g0.validation.insert("dark wood".into(), "Yes".into());
    g0.validation.insert("dragon".into(), "No".into());
    images.push(g0);

    // A single cat.
    let mut g1 = ScriptedImage::new("golden-01", 512, 512);
    g1.general = "A cat.".into();
    g1.detail = "A white cat on a windowsill.".into();
    g1.detections = vec![
        ("cat".into(), BoundingBox::raw(100, 100, 380, 420), 0.95),
        (
            "windowsill".into(),
            BoundingBox::raw(0, 380, 512, 512),
            0.55,
        ),
    ];
    g1.region_beams.insert(
        "cat".into(),
        vec!["cat with white fur".into(), "cat sleeping".into()],
    );
    g1.region_beams
        .insert("windowsill".into(), vec!["windowsill painted white".into()]);
    g1.validation.insert("cat".into(), "Yes".into());
    g1.validation.insert("white fur".into(), "Yes".into());
    g1.validation.insert("windowsill".into(), "Yes".into());
    images.push(g1);

    // Nothing groundable: captions without nouns.
    let mut g2 = ScriptedImage::new("golden-02", 320, 240);
    g2.general = "Running quickly.".into();
    g2.detail = "Moving very fast.".into();
    images.push(g2);

    // Counting filter rejects the only group.
    let mut g3 = ScriptedImage::new("golden-03", 640, 480);
    g3.general = "Three zebras.".into();
    g3.detail = "Three zebras in a field.".into();
    g3.detections = vec![
        ("zebra".into(), BoundingBox::raw(0, 0, 200, 200), 0.9),
        ("zebra".into(), BoundingBox::raw(210, 0, 420, 200), 0.9),
        ("zebra".into(), BoundingBox::raw(430, 0, 630, 200), 0.9),
        ("field".into(), BoundingBox::raw(0, 180, 640, 480), 0.6),
    ];
    g3.region_beams
        .insert("zebra".into(), vec!["zebra with stripes".into()]);
    g3.region_beams
        .insert("field".into(), vec!["field of green grass".into()]);
    g3.counting.insert("zebra".into(), "No".into());
    g3.validation.insert("zebra".into(), "Yes".into());
    g3.validation.insert("stripe".into(), "Yes".into());
    g3.validation.insert("field".into(), "Yes".into());
    g3.validation.insert("green grass".into(), "Yes".into());
    images.push(g3);

    // A name with a space and a unicode caption.
    let mut g4 = ScriptedImage::new("golden-04", 800, 600);
    g4.general = "A traffic light over a café.".into();
    g4.detail = "A traffic light above a small café.".into();
    g4.detections = vec![
        (
            "traffic light".into(),
            BoundingBox::raw(300, 0, 420, 180),
            0.88,
        ),
        ("café".into(), BoundingBox::raw(80, 200, 720, 600), 0.71),
    ];
    g4.region_beams.insert(
        "traffic light".into(),
        vec![
            "traffic light glowing red".into(),
            "traffic light on a pole".into(),
        ],
    );
    g4.region_beams
        .insert("café".into(), vec!["café with outdoor seating".into()]);
    g4.ocr.insert("café".into(), "ESPRESSO".into());
    g4.validation.insert("traffic light".into(), "Yes".into());
    g4.validation.insert("pole".into(), "Yes".into());
    g4.validation.insert("café".into(), "Yes".into());
    images.push(g4);

    // Duplicate boxes that IoU-dedup must collapse.
    let mut g5 = ScriptedImage::new("golden-05", 640, 480);
    g5.general = "A bus.".into();
    g5.detail = "A yellow bus on the street.".into();
    g5.detections = vec![
        ("bus".into(), BoundingBox::raw(100, 100, 500, 400), 0.9),
        ("bus".into(), BoundingBox::raw(102, 101, 501, 401), 0.8),
        ("street".into(), BoundingBox::raw(0, 300, 640, 480), 0.5),
    ];
    g5.region_beams
        .insert("bus".into(), vec!["bus painted yellow".into()]);
    g5.region_beams
        .insert("street".into(), vec!["street with light traffic".into()]);
    g5.ocr.insert("bus".into(), "ROUTE 42".into());
    g5.validation.insert("bus".into(), "Yes".into());
    g5.validation.insert("street".into(), "Yes".into());
    g5.validation.insert("light traffic".into(), "maybe".into());
    images.push(g5);

    images
}

// ---------------------------------------------------------------------------
// Random valid records (for round-trip tests)
// ---------------------------------------------------------------------------

const NAME_POOL: &[&str] = &[
    "dog",
    "bench",
    "traffic light",
    "fire-truck",
    "dog's bowl",
    "class",
    "width",
    "height",
    "stop sign",
    "café table",
    "person",
    "red panda",
    "bus stop",
    "street lamp",
    "4x4",
];

const CAPTION_POOL: &[&str] = &[
    "a quiet scene",
    "sign that says \"STOP\" in red",
    "first line\nsecond line",
    "tab\tseparated",
    "back\\slash and more",
    "smiling dog 🐕 outdoors",
    "it's a small jar",
    "curly {braces} and [brackets]",
    "trailing spaces   kept",
    "üñíçødé text",
];

pub fn random_record(rng: &mut Rng, index: usize) -> W2CRecord {
    let width = rng.range_i64(50, 2000) as u32;
    let height = rng.range_i64(50, 2000) as u32;
    let group_count = 1 + rng.below(5) as usize;
    let mut names: Vec<&str> = Vec::new();
    while names.len() < group_count {
        let candidate = rng.pick(NAME_POOL);
        if !names.contains(candidate) {
            names.push(candidate);
        }
    }
    let groups = names
        .into_iter()
        .map(|name| {
            let item_count = 1 + rng.below(4) as usize;
            let items = (0..item_count)
                .map(|_| {
                    let x1 = rng.range_i64(0, i64::from(width) - 2);
                    let y1 = rng.range_i64(0, i64::from(height) - 2);
                    let x2 = rng.range_i64(x1 + 1, i64::from(width) + 1);
                    let y2 = rng.range_i64(y1 + 1, i64::from(height) + 1);
                    ConceptAnnotation {
                        name: name.to_string(),
                        caption: rng.pick(CAPTION_POOL).to_string(),
                        text: if rng.chance(1, 3) {
                            Some(rng.pick(CAPTION_POOL).to_string())
                        } else {
                            None
                        },
                        bbox: BoundingBox::raw(x1, y1, x2, y2),
                    }
                })
                .collect();
            AnnotatedGroup {
                name: name.to_string(),
                items,
            }
        })
        .collect();
    W2CRecord {
        image: ImageRecord::new(
            format!("rec-{index:04}"),
            format!("rec-{index:04}.png"),
            width,
            height,
        ),
        global_caption: rng.pick(CAPTION_POOL).to_string(),
        groups,
        code: String::new(),
    }
}
