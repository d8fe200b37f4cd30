//! Conversation-format emitters (the single-round and multi-round ablation
//! arms) and few-shot prompt assembly.

use serde::{Deserialize, Serialize};

use super::CodegenError;
use crate::datamodel::{ConceptAnnotation, W2CRecord};

pub const SINGLE_ROUND_INSTRUCTION: &str =
    "Describe the image in detail, including every visual concept, its location, and any visible text.";
pub const MULTI_ROUND_GLOBAL_QUESTION: &str = "What does the image show?";

/// Instruction-tuning conversation layout: `{"conversations":[{"from","value"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversations: Vec<ConversationTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub from: String,
    pub value: String,
}

fn turn(from: &str, value: String) -> ConversationTurn {
    ConversationTurn {
        from: from.to_string(),
        value,
    }
}

fn annotation_line(annotation: &ConceptAnnotation) -> String {
    let mut line = format!(
        "{} at {}: {}",
        annotation.name, annotation.bbox, annotation.caption
    );
    if let Some(text) = &annotation.text {
        line.push_str(&format!(" Text: \"{text}\""));
    }
    line
}

/// One instruction/answer pair: the answer concatenates the global caption
/// and every annotation in reading order. Absent OCR text is omitted.
pub fn emit_single_round(record: &W2CRecord) -> Conversation {
    let mut answer = record.global_caption.clone();
    for group in &record.groups {
        for annotation in &group.items {
            answer.push('\n');
            answer.push_str(&format!("- {}", annotation_line(annotation)));
        }
    }
    Conversation {
        conversations: vec![
            turn("human", SINGLE_ROUND_INSTRUCTION.to_string()),
            turn("gpt", answer),
        ],
    }
}

/// A global-caption round followed by one round per group; each group round
/// names the group and answers with its annotations.
pub fn emit_multi_round(record: &W2CRecord) -> Conversation {
    let mut turns = vec![
        turn("human", MULTI_ROUND_GLOBAL_QUESTION.to_string()),
        turn("gpt", record.global_caption.clone()),
    ];
    for group in &record.groups {
        turns.push(turn(
            "human",
            format!("Describe the {} in the image.", group.name),
        ));
        let answer = group
            .items
            .iter()
            .map(annotation_line)
            .collect::<Vec<_>>()
            .join("\n");
        turns.push(turn("gpt", answer));
    }
    Conversation {
        conversations: turns,
    }
}

/// One few-shot exemplar: an image description (either a detail caption or
/// an emitted code document), a question about it, and the answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShot {
    pub description: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotQuery {
    pub description: String,
    pub question: String,
}

/// Concatenates shots with fixed delimiters, then the query with an empty
/// answer slot for the model to fill.
pub fn build_few_shot_prompt(
    shots: &[FewShot],
    query: &FewShotQuery,
) -> Result<String, CodegenError> {
    if shots.is_empty() {
        return Err(CodegenError::EmptyShots);
    }
    let mut prompt = String::new();
    for shot in shots {
        prompt.push_str(&format!(
            "Description: {}\nQuestion: {}\nAnswer: {}\n\n",
            shot.description, shot.question, shot.answer
        ));
    }
    prompt.push_str(&format!(
        "Description: {}\nQuestion: {}\nAnswer:",
        query.description, query.question
    ));
    Ok(prompt)
}
