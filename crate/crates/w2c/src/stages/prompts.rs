//! The six instruction prompts used by the pipeline, bundled as defaults
//! and overridable from a JSON template file.
//!
//! Placeholders: `{e}` is the concept name, `{parse times}` a group's
//! member count, `{group key}` the group's name.

use serde::{Deserialize, Serialize};

pub const DEFAULT_GLOBAL: &str =
    "Please provide a simple sentence that describes this image accurately.";
pub const DEFAULT_DETAIL: &str = "Please describe all the visual concepts in the image in detail, \
     but use concise words with no more than 120 words.";
pub const DEFAULT_REGION_DESC: &str = "From the image, provide one sentence that describes {e} \
     (you should try your best to include attributes like shape, color or material), \
     especially, using {e} as the beginning of your answer.";
pub const DEFAULT_OCR: &str = "List all the text in the image, answer with the ocr tokens only, \
     and answer 'No' with one word if there isn't any.";
pub const DEFAULT_VALID_CONCEPT: &str =
    "Is '{e}' a valid and visible visual concept in the image? \
     Answer yes or no with only one single word.";
pub const DEFAULT_VALID_GROUP: &str =
    "Is there {parse times} or more {group key} in the image? Answer yes or no with a single word.";

/// Which prompt a template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptName {
    Global,
    Detail,
    RegionDesc,
    Ocr,
    ValidConcept,
    ValidGroup,
}

/// The six templates for one run. Deserializing a partial JSON object keeps
/// the bundled default for any missing field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSet {
    pub global: String,
    pub detail: String,
    pub region_desc: String,
    pub ocr: String,
    pub valid_concept: String,
    pub valid_group: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            global: DEFAULT_GLOBAL.to_string(),
            detail: DEFAULT_DETAIL.to_string(),
            region_desc: DEFAULT_REGION_DESC.to_string(),
            ocr: DEFAULT_OCR.to_string(),
            valid_concept: DEFAULT_VALID_CONCEPT.to_string(),
            valid_group: DEFAULT_VALID_GROUP.to_string(),
        }
    }
}

impl PromptSet {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn template(&self, name: PromptName) -> &str {
        match name {
            PromptName::Global => &self.global,
            PromptName::Detail => &self.detail,
            PromptName::RegionDesc => &self.region_desc,
            PromptName::Ocr => &self.ocr,
            PromptName::ValidConcept => &self.valid_concept,
            PromptName::ValidGroup => &self.valid_group,
        }
    }

    pub fn render_region_desc(&self, concept_name: &str) -> String {
        self.region_desc.replace("{e}", concept_name)
    }

    pub fn render_valid_concept(&self, concept_name: &str) -> String {
        self.valid_concept.replace("{e}", concept_name)
    }

    pub fn render_valid_group(&self, count: usize, group_name: &str) -> String {
        self.valid_group
            .replace("{parse times}", &count.to_string())
            .replace("{group key}", group_name)
    }

    /// True when every template renders without leftover placeholders.
    pub fn check_placeholders(&self) -> Result<(), String> {
        for (name, rendered) in [
            ("global", self.global.clone()),
            ("detail", self.detail.clone()),
            ("region_desc", self.render_region_desc("x")),
            ("ocr", self.ocr.clone()),
            ("valid_concept", self.render_valid_concept("x")),
            ("valid_group", self.render_valid_group(1, "x")),
        ] {
            if has_unfilled_placeholder(&rendered) {
                return Err(format!("template {name:?} leaves unfilled placeholders"));
            }
        }
        Ok(())
    }
}

pub(crate) fn has_unfilled_placeholder(rendered: &str) -> bool {
    ["{e}", "{parse times}", "{group key}"]
        .iter()
        .any(|p| rendered.contains(p))
}
