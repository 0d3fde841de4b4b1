//! Self-supervised corpus construction.
//!
//! Training samples mask known target keywords and are labeled with the
//! keyword's category; test samples mask euphemisms and are labeled from a
//! ground-truth list. Each sample keeps the masked word's surface form as the
//! key for its image and speech evidence.

mod build;
mod io;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{KomeiError, Result};

pub use build::{build_test_set, build_training_set, split, KeywordMatcher};
pub use io::{
    corpus_from_jsonl, corpus_to_jsonl, load_ground_truth, load_vocabulary, read_corpus, write_corpus,
    CategoryRef, GroundTruthFile, VocabularyFile,
};

/// Literal token replacing the masked span.
pub const MASK: &str = "[MASK]";

/// Lowercases and splits on whitespace and punctuation.
///
/// A token is either a maximal run of alphanumeric characters (apostrophes
/// inside a run are kept, so "don't" stays whole) or a single other
/// non-whitespace character. The literal `[MASK]` survives as one token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut rest = lower.as_str();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(std::mem::take(word));
        }
    };
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("[mask]") {
            flush(&mut word, &mut tokens);
            tokens.push(MASK.to_string());
            rest = &rest["[mask]".len()..];
            continue;
        }
        if c.is_alphanumeric() || (c == '\'' && !word.is_empty() && next_is_alnum(rest)) {
            word.push(c);
        } else {
            flush(&mut word, &mut tokens);
            if !c.is_whitespace() {
                tokens.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn next_is_alnum(rest: &str) -> bool {
    rest.chars().nth(1).is_some_and(char::is_alphanumeric)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Drug,
    Weapon,
    Sexuality,
    Custom,
}

impl Domain {
    /// Image evidence exists for every domain except sexuality, where only
    /// speech is collected.
    pub fn default_has_images(self) -> bool {
        !matches!(self, Domain::Sexuality)
    }
}

/// Target-keyword categories and the surface forms that map to them.
#[derive(Clone, Debug, PartialEq)]
pub struct KeywordVocabulary {
    categories: Vec<String>,
    members: IndexMap<String, usize>,
    pub domain: Domain,
    pub has_images: bool,
    pub has_speech: bool,
}

impl KeywordVocabulary {
    pub fn new(
        categories: Vec<String>,
        members: IndexMap<String, usize>,
        domain: Domain,
        has_images: bool,
        has_speech: bool,
    ) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(KomeiError::Config(format!("duplicate category {c:?}")));
            }
        }
        for (surface, &idx) in &members {
            if idx >= categories.len() {
                return Err(KomeiError::Config(format!(
                    "member {surface:?} maps to category {idx}, but only {} exist",
                    categories.len()
                )));
            }
            if tokenize(surface).is_empty() {
                return Err(KomeiError::Config(format!("member {surface:?} has no tokens")));
            }
        }
        Ok(Self {
            categories,
            members,
            domain,
            has_images,
            has_speech,
        })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn members(&self) -> &IndexMap<String, usize> {
        &self.members
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Euphemism surface → category index; used only for building test sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruthMap {
    entries: IndexMap<String, usize>,
}

impl GroundTruthMap {
    pub fn new(entries: IndexMap<String, usize>, n_categories: usize) -> Result<Self> {
        if let Some((k, v)) = entries.iter().find(|(_, &v)| v >= n_categories) {
            return Err(KomeiError::Config(format!(
                "euphemism {k:?} maps to category {v}, but only {n_categories} exist"
            )));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &IndexMap<String, usize> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One sentence with exactly one masked slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedSample {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: Option<usize>,
    pub media_key: String,
    pub split: Split,
}

impl MaskedSample {
    pub fn mask_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == MASK).count()
    }

    pub fn validate(&self) -> Result<()> {
        match self.mask_count() {
            1 => Ok(()),
            n => Err(KomeiError::Data(format!(
                "sample {} has {n} {MASK} tokens, expected exactly one",
                self.id
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("We had already paid $70 for some shitty Weed..."),
            ["we", "had", "already", "paid", "$", "70", "for", "some", "shitty", "weed", ".", ".", "."]
        );
        assert_eq!(tokenize("don't  stop"), ["don't", "stop"]);
        assert_eq!(tokenize("'quoted'"), ["'", "quoted", "'"]);
        assert_eq!(tokenize("pull my [MASK] on you"), ["pull", "my", MASK, "on", "you"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn vocabulary_rejects_bad_index_and_duplicates() {
        let mut m = IndexMap::new();
        m.insert("weed".to_string(), 2);
        assert!(KeywordVocabulary::new(vec!["a".into(), "b".into()], m, Domain::Drug, true, true).is_err());
        assert!(KeywordVocabulary::new(vec!["a".into(), "a".into()], IndexMap::new(), Domain::Drug, true, true).is_err());
    }

    #[test]
    fn sexuality_domain_defaults_to_no_images() {
        assert!(!Domain::Sexuality.default_has_images());
        assert!(Domain::Weapon.default_has_images());
    }
}
