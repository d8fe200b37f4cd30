//! Pipeline driver: ingests a manifest, runs the generation and filtering
//! stages per image on a bounded worker pool, applies the drop policy, and
//! writes ordered JSONL output plus run statistics.
//!
//! Per-image failures never abort a run; they are recorded and counted.
//! A run directory can be resumed after interruption: completed images are
//! skipped and the final output is identical to an uninterrupted run.

mod cache;
mod manifest;
mod stats;

pub use cache::{ResponseCache, Stage};
pub use manifest::load_manifest;
pub use stats::RunStats;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{
    grounding_request_key, vlm_request_key, BackendError, GroundingBackend, GroundingRequest,
    GroundingResponse, ImageSource, VlmBackend, VlmRequest, VlmResponse,
};
use crate::codegen;
use crate::consistency::{self, ValidationMemo};
use crate::datamodel::{
    validate_record, AnnotatedGroup, ConceptAnnotation, DropPolicy, ImageRecord, OutputFormat,
    PipelineConfig, Verdict, W2CRecord,
};
use crate::stages::{self, PromptSet};

pub const OUTPUT_FILE: &str = "w2c.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const CACHE_DIR: &str = "cache";
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run directory was created with a different configuration (stored hash {expected}, current {found}); start a fresh run directory")]
    ConfigMismatch { expected: String, found: String },
    #[error("{0} already contains a run; pass --resume to continue it")]
    OutDirNotEmpty(PathBuf),
    #[error("{0} has no resumable run")]
    NothingToResume(PathBuf),
}

/// On-disk run configuration: the pipeline knobs plus backend endpoints.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfigFile {
    pub pipeline: PipelineConfig,
    pub vlm_endpoint: Option<String>,
    pub grounding_endpoint: Option<String>,
    pub prompt_template_file: Option<String>,
}

pub struct PipelineBackends<'a> {
    pub vlm: &'a dyn VlmBackend,
    pub grounding: &'a dyn GroundingBackend,
}

#[derive(Debug)]
pub struct RunSummary {
    pub stats: RunStats,
    pub output_path: PathBuf,
}

/// Keeps or drops a finished record based on its groups' counting verdicts.
/// `verdicts` is parallel to `record.groups`.
pub fn apply_drop_policy(
    record: W2CRecord,
    verdicts: &[Verdict],
    policy: DropPolicy,
) -> Option<W2CRecord> {
    debug_assert_eq!(record.groups.len(), verdicts.len());
    match policy {
        DropPolicy::DropRecord => {
            if verdicts.contains(&Verdict::Inconsistent) {
                None
            } else {
                Some(record)
            }
        }
        DropPolicy::DropGroup => {
            let groups: Vec<AnnotatedGroup> = record
                .groups
                .into_iter()
                .zip(verdicts)
                .filter(|(_, v)| **v != Verdict::Inconsistent)
                .map(|(g, _)| g)
                .collect();
            if groups.is_empty() {
                None
            } else {
                Some(W2CRecord { groups, ..record })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Cached backend hub
// ---------------------------------------------------------------------------

struct Hub<'a> {
    vlm: &'a dyn VlmBackend,
    grounding: &'a dyn GroundingBackend,
    cache: &'a ResponseCache,
    calls: AtomicU64,
}

impl Hub<'_> {
    fn vlm_call(&self, stage: Stage, request: &VlmRequest) -> Result<VlmResponse, BackendError> {
        let key = vlm_request_key(request);
        if let Some(value) = self.cache.get(&key) {
            let wire = serde_json::from_value(value).map_err(|e| BackendError::Contract {
                message: format!("cached entry {key} is not a VLM response: {e}"),
            })?;
            return crate::backends::vlm_response_from_wire(wire, request);
        }
        let response = self.vlm.complete(request)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let wire = serde_json::to_value(crate::backends::vlm_response_to_wire(&response))
            .expect("wire serialization cannot fail");
        self.cache.put(key, stage, wire)?;
        Ok(response)
    }

    fn grounding_call(
        &self,
        request: &GroundingRequest,
    ) -> Result<GroundingResponse, BackendError> {
        let key = grounding_request_key(request);
        if let Some(value) = self.cache.get(&key) {
            let wire = serde_json::from_value(value).map_err(|e| BackendError::Contract {
                message: format!("cached entry {key} is not a grounding response: {e}"),
            })?;
            return crate::backends::grounding_response_from_wire(wire, request);
        }
        let response = self.grounding.ground(request)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let wire = serde_json::to_value(crate::backends::grounding_response_to_wire(&response))
            .expect("wire serialization cannot fail");
        self.cache.put(key, Stage::Grounding, wire)?;
        Ok(response)
    }
}

// ---------------------------------------------------------------------------
// Per-image outcome bookkeeping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
struct ImageMetrics {
    concepts_detected: u64,
    groups_total: u64,
    groups_inconsistent: u64,
    candidates_scored: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OutcomeStatus {
    Ok,
    Dropped,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImageOutcome {
    index: usize,
    id: String,
    status: OutcomeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
    metrics: ImageMetrics,
}

enum Processed {
    Record(String),
    Dropped(String),
}

fn process_image(
    record: &ImageRecord,
    base_dir: &Path,
    config: &PipelineConfig,
    prompts: &PromptSet,
    hub: &Hub<'_>,
    metrics: &mut ImageMetrics,
) -> Result<Processed, String> {
    let path = {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let image = ImageSource::from_file(record.clone(), &path)
        .map_err(|e| format!("cannot read image {}: {e}", path.display()))?;

    let caption_vlm = |req: &VlmRequest| hub.vlm_call(Stage::Caption, req);
    let region_vlm = |req: &VlmRequest| hub.vlm_call(Stage::RegionCaption, req);
    let ocr_vlm = |req: &VlmRequest| hub.vlm_call(Stage::Ocr, req);
    let counting_vlm = |req: &VlmRequest| hub.vlm_call(Stage::CountingFilter, req);
    let validation_vlm = |req: &VlmRequest| hub.vlm_call(Stage::ConceptValidation, req);
    let grounding = |req: &GroundingRequest| hub.grounding_call(req);

    // Global and detail captions.
    let captions = stages::gen_global_captions(&image, config, prompts, &caption_vlm)
        .map_err(|e| e.to_string())?;

    // Phrase extraction and grounding.
    let concepts = stages::extract_concepts(&image, &captions, config, &grounding)
        .map_err(|e| e.to_string())?;
    metrics.concepts_detected = concepts.len() as u64;
    if concepts.is_empty() {
        return Ok(Processed::Dropped("no grounded visual concepts".into()));
    }

    // Region captions, then OCR, for every concept.
    let mut region_candidates = Vec::with_capacity(concepts.len());
    for concept in &concepts {
        region_candidates.push(
            stages::gen_region_captions(&image, concept, config, prompts, &region_vlm)
                .map_err(|e| e.to_string())?,
        );
    }
    let mut ocr_texts = Vec::with_capacity(concepts.len());
    for concept in &concepts {
        ocr_texts.push(
            stages::extract_ocr(&image, concept, prompts, &ocr_vlm).map_err(|e| e.to_string())?,
        );
    }

    // Same-name grouping.
    let groups = consistency::group_concepts(&concepts);
    metrics.groups_total = groups.len() as u64;

    // Counting filter.
    let verdicts: Vec<Verdict> = if config.counting_filter_enabled {
        let mut verdicts = Vec::with_capacity(groups.len());
        for group in &groups {
            verdicts.push(
                consistency::counting_filter(&image, group, prompts, &counting_vlm)
                    .map_err(|e| e.to_string())?,
            );
        }
        verdicts
    } else {
        vec![Verdict::Unchecked; groups.len()]
    };
    metrics.groups_inconsistent = verdicts
        .iter()
        .filter(|v| **v == Verdict::Inconsistent)
        .count() as u64;

    // Caption selection: re-ranking by validated sub-concepts, or beam 0.
    let group_box_by_name: HashMap<&str, crate::datamodel::BoundingBox> = groups
        .iter()
        .map(|g| (g.name.as_str(), g.merged_box))
        .collect();
    let mut selected_captions = Vec::with_capacity(concepts.len());
    if config.reranking_enabled {
        let memo = ValidationMemo::new();
        for (concept, candidates) in concepts.iter().zip(&region_candidates) {
            let populated = consistency::extract_candidate_concepts(candidates);
            let phrases: BTreeSet<String> = populated
                .iter()
                .flat_map(|c| c.sub_concepts.iter().map(|(p, _)| p.normalized.clone()))
                .collect();
            let group_box = group_box_by_name[concept.name.as_str()];
            let verdict_map = if phrases.is_empty() {
                BTreeMap::new()
            } else {
                consistency::validate_concepts(
                    &image,
                    group_box,
                    &phrases,
                    prompts,
                    &validation_vlm,
                    &memo,
                )
                .map_err(|e| e.to_string())?
            };
            let mut scored = Vec::with_capacity(populated.len());
            for candidate in &populated {
                scored.push(
                    consistency::apply_verdicts(candidate, &verdict_map)
                        .map_err(|e| e.to_string())?,
                );
            }
            metrics.candidates_scored += scored.len() as u64;
            let winner = consistency::select_caption(&scored).map_err(|e| e.to_string())?;
            selected_captions.push(winner.text.clone());
        }
    } else {
        for candidates in &region_candidates {
            selected_captions.push(candidates[0].text.clone());
        }
    }

    // Assemble the record: groups in first-appearance order, members in
    // detection order, annotation names equal to their group name.
    let mut member_indices: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, concept) in concepts.iter().enumerate() {
        match member_indices
            .iter_mut()
            .find(|(name, _)| name == &concept.name)
        {
            Some((_, indices)) => indices.push(i),
            None => member_indices.push((concept.name.clone(), vec![i])),
        }
    }
    let annotated_groups: Vec<AnnotatedGroup> = member_indices
        .into_iter()
        .map(|(name, indices)| AnnotatedGroup {
            items: indices
                .into_iter()
                .map(|i| ConceptAnnotation {
                    name: name.clone(),
                    caption: selected_captions[i].clone(),
                    text: ocr_texts[i].clone(),
                    bbox: concepts[i].bbox,
                })
                .collect(),
            name,
        })
        .collect();
    debug_assert_eq!(annotated_groups.len(), groups.len());

    let full_record = W2CRecord {
        image: record.clone(),
        global_caption: captions.general.clone(),
        groups: annotated_groups,
        code: String::new(),
    };

    // Counting-filter drop policy, then formatting.
    let Some(mut surviving) = apply_drop_policy(full_record, &verdicts, config.drop_policy) else {
        return Ok(Processed::Dropped("counting-inconsistent".into()));
    };
    let document = codegen::emit_code(&surviving).map_err(|e| e.to_string())?;
    surviving.code = document.text;

    let violations = validate_record(&surviving);
    if !violations.is_empty() {
        return Err(format!(
            "record failed validation: {}",
            violations.join("; ")
        ));
    }

    let line = match config.output_format {
        OutputFormat::Code => surviving.to_jsonl_line(),
        OutputFormat::SingleRound => {
            conversation_line(&surviving.image.id, codegen::emit_single_round(&surviving))
        }
        OutputFormat::MultiRound => {
            conversation_line(&surviving.image.id, codegen::emit_multi_round(&surviving))
        }
    };
    Ok(Processed::Record(line))
}

#[derive(Serialize)]
struct ConversationLine<'a> {
    id: &'a str,
    conversations: Vec<codegen::ConversationTurn>,
}

fn conversation_line(id: &str, conversation: codegen::Conversation) -> String {
    serde_json::to_string(&ConversationLine {
        id,
        conversations: conversation.conversations,
    })
    .expect("conversation serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Run directory management
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RunMeta {
    config_hash: String,
}

/// Hash of everything that must match for outcome reuse: pipeline config,
/// prompt set, and the manifest content.
fn config_hash(config: &PipelineConfig, prompts: &PromptSet, manifest_bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update(b"\x1e");
    hasher.update(serde_json::to_vec(prompts).expect("prompts serialize"));
    hasher.update(b"\x1e");
    hasher.update(Sha256::digest(manifest_bytes));
    hex::encode(hasher.finalize())
}

fn load_outcomes(path: &Path) -> Result<HashMap<usize, ImageOutcome>, PipelineError> {
    let mut outcomes = HashMap::new();
    if !path.exists() {
        return Ok(outcomes);
    }
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    for (position, line) in lines.iter().enumerate() {
        match serde_json::from_str::<ImageOutcome>(line) {
            Ok(outcome) => {
                outcomes.insert(outcome.index, outcome);
            }
            // A truncated final line is what an interrupted run leaves
            // behind; that image is simply reprocessed.
            Err(_) if position + 1 == lines.len() => break,
            Err(e) => {
                return Err(PipelineError::Config(format!(
                    "corrupt outcome log {}: {e}",
                    path.display()
                )));
            }
        }
    }
    Ok(outcomes)
}

/// Runs the full pipeline over every manifest image.
///
/// Output lines follow manifest order regardless of completion order, so a
/// fixed (manifest, config, replay) triple produces byte-identical output at
/// any concurrency level.
pub fn run_pipeline(
    manifest_path: &Path,
    config: &PipelineConfig,
    prompts: &PromptSet,
    backends: PipelineBackends<'_>,
    out_dir: &Path,
    resume: bool,
) -> Result<RunSummary, PipelineError> {
    config.validate().map_err(PipelineError::Config)?;
    prompts
        .check_placeholders()
        .map_err(PipelineError::Config)?;

    let records = load_manifest(manifest_path)?;
    let manifest_bytes = std::fs::read(manifest_path)?;
    let base_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let cache_dir = out_dir.join(CACHE_DIR);
    std::fs::create_dir_all(&cache_dir)?;
    let hash = config_hash(config, prompts, &manifest_bytes);
    let meta_path = cache_dir.join(META_FILE);
    let outcomes_path = cache_dir.join(OUTCOMES_FILE);

    let mut completed: HashMap<usize, ImageOutcome> = HashMap::new();
    if resume {
        if !meta_path.exists() {
            return Err(PipelineError::NothingToResume(out_dir.to_path_buf()));
        }
        let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| PipelineError::Config(format!("corrupt run meta: {e}")))?;
        if meta.config_hash != hash {
            return Err(PipelineError::ConfigMismatch {
                expected: meta.config_hash,
                found: hash,
            });
        }
        completed = load_outcomes(&outcomes_path)?;
        if let Some(stray) = completed.keys().find(|i| **i >= records.len()) {
            return Err(PipelineError::Config(format!(
                "outcome log refers to image index {stray}, beyond the {}-image manifest",
                records.len()
            )));
        }
    } else if outcomes_path.exists() {
        return Err(PipelineError::OutDirNotEmpty(out_dir.to_path_buf()));
    }
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&RunMeta { config_hash: hash }).expect("meta serializes"),
    )?;

    let cache = ResponseCache::open(&cache_dir.join(RESPONSES_FILE))?;
    let hub = Hub {
        vlm: backends.vlm,
        grounding: backends.grounding,
        cache: &cache,
        calls: AtomicU64::new(0),
    };

    let pending: Vec<(usize, &ImageRecord)> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| !completed.contains_key(i))
        .collect();

    let outcome_log = Mutex::new(std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&outcomes_path)?,
    ));
    let results: Mutex<Vec<Option<ImageOutcome>>> = Mutex::new(vec![None; records.len()]);
    for (index, outcome) in &completed {
        results.lock().expect("results poisoned")[*index] = Some(outcome.clone());
    }

    let next = AtomicUsize::new(0);
    let worker_count = config.max_concurrent_requests.min(pending.len().max(1));
    let log_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                if slot >= pending.len() {
                    break;
                }
                let (index, record) = pending[slot];
                let mut metrics = ImageMetrics::default();
                let outcome =
                    match process_image(record, &base_dir, config, prompts, &hub, &mut metrics) {
                        Ok(Processed::Record(line)) => ImageOutcome {
                            index,
                            id: record.id.clone(),
                            status: OutcomeStatus::Ok,
                            line: Some(line),
                            detail: None,
                            metrics,
                        },
                        Ok(Processed::Dropped(reason)) => ImageOutcome {
                            index,
                            id: record.id.clone(),
                            status: OutcomeStatus::Dropped,
                            line: None,
                            detail: Some(reason),
                            metrics,
                        },
                        Err(message) => ImageOutcome {
                            index,
                            id: record.id.clone(),
                            status: OutcomeStatus::Error,
                            line: None,
                            detail: Some(message),
                            metrics,
                        },
                    };
                {
                    let mut log = outcome_log.lock().expect("outcome log poisoned");
                    let write_result = serde_json::to_writer(&mut *log, &outcome)
                        .map_err(std::io::Error::from)
                        .and_then(|_| log.write_all(b"\n"))
                        .and_then(|_| log.flush());
                    if let Err(e) = write_result {
                        log_error
                            .lock()
                            .expect("log error poisoned")
                            .get_or_insert(e);
                    }
                }
                results.lock().expect("results poisoned")[index] = Some(outcome);
            });
        }
    });
    if let Some(e) = log_error.into_inner().expect("log error poisoned") {
        return Err(PipelineError::Io(e));
    }

    let outcomes: Vec<ImageOutcome> = results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|o| o.expect("every image processed"))
        .collect();

    // Ordered output, error log, and stats.
    let output_path = out_dir.join(OUTPUT_FILE);
    let mut output = std::io::BufWriter::new(std::fs::File::create(&output_path)?);
    let mut errors = std::io::BufWriter::new(std::fs::File::create(out_dir.join(ERRORS_FILE))?);
    let mut stats = RunStats {
        images_in: records.len() as u64,
        backend_calls: hub.calls.load(Ordering::Relaxed),
        cache_hits: cache.hits(),
        ..RunStats::default()
    };
    for outcome in &outcomes {
        stats.concepts_detected += outcome.metrics.concepts_detected;
        stats.groups_total += outcome.metrics.groups_total;
        stats.groups_inconsistent += outcome.metrics.groups_inconsistent;
        stats.candidates_scored += outcome.metrics.candidates_scored;
        match outcome.status {
            OutcomeStatus::Ok => {
                stats.images_out += 1;
                output.write_all(outcome.line.as_deref().expect("ok has line").as_bytes())?;
                output.write_all(b"\n")?;
            }
            OutcomeStatus::Dropped => stats.images_dropped += 1,
            OutcomeStatus::Error => {
                stats.images_errored += 1;
                let entry = serde_json::json!({
                    "id": outcome.id,
                    "error": outcome.detail.as_deref().unwrap_or("unknown"),
                });
                errors.write_all(entry.to_string().as_bytes())?;
                errors.write_all(b"\n")?;
            }
        }
    }
    output.flush()?;
    errors.flush()?;
    debug_assert!(stats.is_conserved());

    std::fs::write(
        out_dir.join(STATS_FILE),
        serde_json::to_string_pretty(&stats).expect("stats serialize"),
    )?;

    Ok(RunSummary { stats, output_path })
}
