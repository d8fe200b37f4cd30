//! Bundled POS lexicon and lemma exception table.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::PosTag;

const LEXICON_TSV: &str = include_str!("data/lexicon.tsv");
const LEMMA_EXCEPTIONS_TSV: &str = include_str!("data/lemma_exceptions.tsv");

pub(crate) struct Lexicon {
    tags: HashMap<&'static str, PosTag>,
    lemma_exceptions: HashMap<&'static str, &'static str>,
}

impl Lexicon {
    pub(crate) fn shared() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(Lexicon::parse_bundled)
    }

    fn parse_bundled() -> Lexicon {
        let mut tags = HashMap::new();
        for line in tsv_lines(LEXICON_TSV) {
            let (word, tag) = line;
            let tag = match tag {
                "NOUN" => PosTag::Noun,
                "PROPN" => PosTag::Propn,
                "ADJ" => PosTag::Adj,
                "DET" => PosTag::Det,
                "NUM" => PosTag::Num,
                "OTHER" => PosTag::Other,
                other => panic!("bundled lexicon has unknown tag {other:?} for {word:?}"),
            };
            let previous = tags.insert(word, tag);
            assert!(previous.is_none(), "bundled lexicon defines {word:?} twice");
        }
        let mut lemma_exceptions = HashMap::new();
        for (plural, singular) in tsv_lines(LEMMA_EXCEPTIONS_TSV) {
            lemma_exceptions.insert(plural, singular);
        }
        Lexicon {
            tags,
            lemma_exceptions,
        }
    }

    pub(crate) fn tag_of(&self, lowercase_word: &str) -> Option<PosTag> {
        self.tags.get(lowercase_word).copied()
    }

    pub(crate) fn lemma_exception(&self, lowercase_word: &str) -> Option<&'static str> {
        self.lemma_exceptions.get(lowercase_word).copied()
    }
}

fn tsv_lines(source: &'static str) -> impl Iterator<Item = (&'static str, &'static str)> {
    source.lines().filter_map(|line| {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        line.split_once('\t')
    })
}
