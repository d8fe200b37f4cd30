//! Consistency filtering: same-name grouping with box merging, the counting
//! filter, and caption re-ranking by validated sub-concepts.
//!
//! Scoring follows the +1 / -1 rule: each confirmed sub-concept adds one,
//! each hallucinated sub-concept subtracts one, unparseable answers count
//! zero. The candidate with the highest score wins; ties go to the lower
//! beam index.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Mutex;

use crate::backends::{parse_yes_no, BackendError, ImageSource, VlmBackend, VlmRequest};
use crate::datamodel::{
    BoundingBox, CaptionCandidate, ConceptGroup, DetectedConcept, Verdict, YesNo,
};
use crate::nlp;
use crate::stages::PromptSet;

#[derive(Debug, thiserror::Error)]
pub enum ConsistencyError {
    #[error("operation requires a nonempty input")]
    EmptyInput,
    #[error("no verdict for sub-concept {phrase:?}")]
    MissingVerdict { phrase: String },
}

/// Partitions concepts by exact normalized name, preserving first-appearance
/// order. Every input concept lands in exactly one group.
pub fn group_concepts(concepts: &[DetectedConcept]) -> Vec<ConceptGroup> {
    let mut order: Vec<String> = Vec::new();
    let mut buckets: HashMap<String, Vec<DetectedConcept>> = HashMap::new();
    for concept in concepts {
        if !buckets.contains_key(&concept.name) {
            order.push(concept.name.clone());
        }
        buckets
            .entry(concept.name.clone())
            .or_default()
            .push(concept.clone());
    }
    order
        .into_iter()
        .map(|name| {
            let members = buckets.remove(&name).expect("bucket exists");
            let merged_box = merge_boxes(&members.iter().map(|m| m.bbox).collect::<Vec<_>>())
                .expect("members nonempty");
            ConceptGroup {
                name,
                count: members.len(),
                merged_box,
                members,
                verdict: Verdict::Unchecked,
            }
        })
        .collect()
}

/// Componentwise min/max union of all boxes.
pub fn merge_boxes(boxes: &[BoundingBox]) -> Result<BoundingBox, ConsistencyError> {
    let (first, rest) = boxes.split_first().ok_or(ConsistencyError::EmptyInput)?;
    Ok(rest.iter().fold(*first, |acc, b| acc.union(b)))
}

/// Asks whether at least `count` instances of the group's name are visible
/// in the merged-box crop. Yes means consistent; No and unparseable answers
/// both fail the gate.
pub fn counting_filter(
    image: &ImageSource,
    group: &ConceptGroup,
    prompts: &PromptSet,
    vlm: &dyn VlmBackend,
) -> Result<Verdict, BackendError> {
    let response = vlm.complete(&VlmRequest::cropped(
        image.clone(),
        group.merged_box,
        prompts.render_valid_group(group.count, &group.name),
        1,
    ))?;
    Ok(match parse_yes_no(response.top()) {
        YesNo::Yes => Verdict::Consistent,
        YesNo::No | YesNo::Unknown => Verdict::Inconsistent,
    })
}

/// Populates each candidate's sub-concepts from its own caption text.
/// Duplicates within one caption count once; verdicts start Unknown.
pub fn extract_candidate_concepts(candidates: &[CaptionCandidate]) -> Vec<CaptionCandidate> {
    let empty_stoplist = HashSet::new();
    candidates
        .iter()
        .map(|candidate| {
            let phrases = nlp::extract_noun_phrases(&candidate.text);
            let deduped = nlp::dedup_phrases(&phrases, &empty_stoplist);
            CaptionCandidate {
                text: candidate.text.clone(),
                beam_index: candidate.beam_index,
                sub_concepts: deduped.into_iter().map(|p| (p, YesNo::Unknown)).collect(),
                score: 0,
            }
        })
        .collect()
}

/// Per-image memo for sub-concept validation: one backend call per distinct
/// (crop box, phrase), shared safely between concurrent callers. Never share
/// a memo across images.
#[derive(Default)]
pub struct ValidationMemo {
    answers: Mutex<HashMap<(BoundingBox, String), YesNo>>,
}

impl ValidationMemo {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Validates each phrase against the crop of the group box, memoized per
/// (box, phrase). Returns a verdict per phrase.
pub fn validate_concepts(
    image: &ImageSource,
    group_box: BoundingBox,
    phrases: &BTreeSet<String>,
    prompts: &PromptSet,
    vlm: &dyn VlmBackend,
    memo: &ValidationMemo,
) -> Result<BTreeMap<String, YesNo>, BackendError> {
    let mut result = BTreeMap::new();
    for phrase in phrases {
        let mut answers = memo.answers.lock().expect("validation memo poisoned");
        let key = (group_box, phrase.clone());
        let verdict = match answers.get(&key) {
            Some(v) => *v,
            None => {
                let response = vlm.complete(&VlmRequest::cropped(
                    image.clone(),
                    group_box,
                    prompts.render_valid_concept(phrase),
                    1,
                ))?;
                let verdict = parse_yes_no(response.top());
                answers.insert(key, verdict);
                verdict
            }
        };
        drop(answers);
        result.insert(phrase.clone(), verdict);
    }
    Ok(result)
}

/// Sums the candidate's sub-concept verdicts: Yes +1, No -1, Unknown 0.
pub fn score_candidate(
    candidate: &CaptionCandidate,
    verdicts: &BTreeMap<String, YesNo>,
) -> Result<i64, ConsistencyError> {
    let mut score = 0;
    for (phrase, _) in &candidate.sub_concepts {
        let verdict =
            verdicts
                .get(&phrase.normalized)
                .ok_or_else(|| ConsistencyError::MissingVerdict {
                    phrase: phrase.normalized.clone(),
                })?;
        score += match verdict {
            YesNo::Yes => 1,
            YesNo::No => -1,
            YesNo::Unknown => 0,
        };
    }
    Ok(score)
}

/// Rewrites a candidate with its verdicts applied and its score computed.
pub fn apply_verdicts(
    candidate: &CaptionCandidate,
    verdicts: &BTreeMap<String, YesNo>,
) -> Result<CaptionCandidate, ConsistencyError> {
    let score = score_candidate(candidate, verdicts)?;
    let sub_concepts = candidate
        .sub_concepts
        .iter()
        .map(|(phrase, _)| {
            let verdict = verdicts
                .get(&phrase.normalized)
                .copied()
                .unwrap_or(YesNo::Unknown);
            (phrase.clone(), verdict)
        })
        .collect();
    Ok(CaptionCandidate {
        text: candidate.text.clone(),
        beam_index: candidate.beam_index,
        sub_concepts,
        score,
    })
}

/// Argmax by score; ties break toward the lowest beam index.
pub fn select_caption(
    candidates: &[CaptionCandidate],
) -> Result<&CaptionCandidate, ConsistencyError> {
    candidates
        .iter()
        .max_by(|a, b| a.score.cmp(&b.score).then(b.beam_index.cmp(&a.beam_index)))
        .ok_or(ConsistencyError::EmptyInput)
}
