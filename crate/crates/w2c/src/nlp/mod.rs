//! Noun-phrase extraction, normalization, and deduplication.
//!
//! A bundled static lexicon plus suffix rules stand in for a statistical
//! tagger; chunking follows the grammar `DET? NUM? ADJ* NOUN+` (where PROPN
//! counts as a noun). Everything here is a pure function of its inputs.

mod lexicon;

use std::collections::HashSet;

use crate::datamodel::NounPhrase;
use lexicon::Lexicon;

/// Coarse part-of-speech tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosTag {
    Noun,
    Propn,
    Adj,
    Det,
    Num,
    Other,
}

impl PosTag {
    fn is_noun(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::Propn)
    }
}

/// One token with its tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosToken {
    pub text: String,
    pub tag: PosTag,
}

/// Splits text into word and punctuation tokens. Words are runs of
/// alphanumeric characters plus internal apostrophes and hyphens; every
/// other character becomes its own token. Word tokens therefore contain
/// only word characters, which keeps normalization stable under
/// re-tokenization.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_word_char(c) {
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-'
}

fn is_numeric_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| c.is_ascii_digit())
}

/// Singularizes a lowercase word: exception table first, then suffix rules.
/// Idempotent by construction.
fn lemma(word: &str) -> String {
    let lexicon = Lexicon::shared();
    if let Some(singular) = lexicon.lemma_exception(word) {
        return singular.to_string();
    }
    if word.len() <= 3 {
        return word.to_string();
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if word.len() > 4 {
            return format!("{stem}y");
        }
    }
    for sibilant in ["ses", "xes", "zes", "ches", "shes"] {
        if word.ends_with(sibilant) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

fn tag_word(lowercase: &str, original: &str, sentence_initial: bool) -> PosTag {
    let lexicon = Lexicon::shared();
    if is_numeric_token(original) {
        return PosTag::Num;
    }
    if let Some(tag) = lexicon.tag_of(lowercase) {
        return tag;
    }
    // Inflected forms resolve through their lemma.
    let lemmatized = lemma(lowercase);
    if lemmatized != lowercase {
        if let Some(tag) = lexicon.tag_of(&lemmatized) {
            return tag;
        }
    }
    // Possessives behave like noun modifiers.
    if let Some(base) = lowercase
        .strip_suffix("'s")
        .or_else(|| lowercase.strip_suffix("s'"))
    {
        if lexicon.tag_of(base).is_some() || lexicon.tag_of(&lemma(base)).is_some() {
            return PosTag::Noun;
        }
    }
    if !sentence_initial && original.chars().next().is_some_and(char::is_uppercase) {
        return PosTag::Propn;
    }
    if lowercase.len() > 3 {
        if lowercase.ends_with("ly") {
            return PosTag::Other;
        }
        if lowercase.ends_with("ing") || lowercase.ends_with("ed") {
            return PosTag::Other;
        }
        if lowercase.ends_with("ful")
            || lowercase.ends_with("ous")
            || lowercase.ends_with("ive")
            || lowercase.ends_with("able")
            || lowercase.ends_with("ible")
        {
            return PosTag::Adj;
        }
    }
    if !lowercase.chars().any(char::is_alphanumeric) {
        return PosTag::Other;
    }
    // Nouns are the open class in caption text.
    PosTag::Noun
}

/// Tags a sentence. Deterministic for a fixed bundled lexicon; unknown
/// words get a suffix-rule guess or fall back to NOUN.
pub fn tag_tokens(sentence: &str) -> Vec<PosToken> {
    tokenize(sentence)
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let tag = tag_word(&text.to_lowercase(), &text, i == 0);
            PosToken { text, tag }
        })
        .collect()
}

/// Extracts noun phrases matching `DET? NUM? ADJ* NOUN+`, left to right.
/// Surfaces keep the original token casing; normalized forms come from
/// [`normalize_phrase`].
pub fn extract_noun_phrases(text: &str) -> Vec<NounPhrase> {
    let tokens = tag_tokens(text);
    let mut phrases = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut j = i;
        if j < tokens.len() && tokens[j].tag == PosTag::Det {
            j += 1;
        }
        if j < tokens.len() && tokens[j].tag == PosTag::Num {
            j += 1;
        }
        while j < tokens.len() && tokens[j].tag == PosTag::Adj {
            j += 1;
        }
        let noun_start = j;
        while j < tokens.len() && tokens[j].tag.is_noun() {
            j += 1;
        }
        if j > noun_start {
            let surface = tokens[i..j]
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            let normalized = normalize_phrase(&surface);
            phrases.push(NounPhrase {
                surface,
                normalized,
            });
            i = j;
        } else {
            i += 1;
        }
    }
    phrases
}

/// Lowercases, strips leading determiners and numerals, and lemmatizes the
/// head noun. Idempotent: `normalize_phrase(normalize_phrase(s)) ==
/// normalize_phrase(s)`.
pub fn normalize_phrase(surface: &str) -> String {
    let tokens = tag_tokens(surface);
    let mut start = 0;
    while start < tokens.len() && matches!(tokens[start].tag, PosTag::Det | PosTag::Num) {
        start += 1;
    }
    let kept = &tokens[start..];
    if kept.is_empty() {
        return surface.trim().to_lowercase();
    }
    let mut words: Vec<String> = kept.iter().map(|t| t.text.to_lowercase()).collect();
    if let Some(last) = words.last_mut() {
        *last = lemma(last);
    }
    words.join(" ")
}

/// Keeps the first phrase for each normalized form, dropping stoplisted
/// phrases. Order is otherwise preserved; idempotent.
pub fn dedup_phrases(phrases: &[NounPhrase], stoplist: &HashSet<String>) -> Vec<NounPhrase> {
    let mut seen = HashSet::new();
    phrases
        .iter()
        .filter(|p| !stoplist.contains(&p.normalized) && seen.insert(p.normalized.clone()))
        .cloned()
        .collect()
}
