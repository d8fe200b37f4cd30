//! w2c: a self-instructed multimodal data-construction pipeline.
//!
//! From raw images, the pipeline produces consistency-filtered,
//! region-grounded structured annotations serialized in a Python-code
//! format. Model inference happens behind two wire contracts (a
//! vision-language model and a phrase-grounding detector), so runs are
//! backend-agnostic and fully replayable for tests.
//!
//! Per image the pipeline:
//! 1. generates a general and a detail caption,
//! 2. extracts noun phrases and grounds them to boxes,
//! 3. captions each grounded concept's crop with beam search,
//! 4. extracts OCR text per crop,
//! 5. groups same-name concepts and merges their boxes,
//! 6. checks each group's count against the image (counting filter),
//! 7. re-ranks caption candidates by validated sub-concepts,
//! 8. applies the drop policy and serializes the survivors.

pub mod backends;
pub mod codegen;
pub mod consistency;
pub mod datamodel;
pub mod nlp;
pub mod orchestrator;
pub mod stages;

pub use datamodel::{
    validate_record, AnnotatedGroup, BoundingBox, CaptionCandidate, ConceptAnnotation,
    ConceptGroup, DetectedConcept, DropPolicy, ImageRecord, JsonlRecord, NounPhrase, OutputFormat,
    PipelineConfig, Verdict, W2CRecord, YesNo,
};
pub use orchestrator::{run_pipeline, PipelineBackends, PipelineError, RunStats, RunSummary};
pub use stages::PromptSet;
