use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Domain, GroundTruthMap, KeywordVocabulary, MaskedSample};
use crate::error::{KomeiError, Result};

/// A category given either by index or by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoryRef {
    Index(usize),
    Name(String),
}

impl CategoryRef {
    fn resolve(&self, categories: &[String]) -> Result<usize> {
        match self {
            CategoryRef::Index(i) if *i < categories.len() => Ok(*i),
            CategoryRef::Index(i) => Err(KomeiError::Config(format!(
                "category index {i} out of range ({} categories)",
                categories.len()
            ))),
            CategoryRef::Name(n) => categories
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| KomeiError::Config(format!("unknown category {n:?}"))),
        }
    }
}

/// On-disk vocabulary JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VocabularyFile {
    pub domain: Domain,
    pub categories: Vec<String>,
    pub members: IndexMap<String, CategoryRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_images: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_speech: Option<bool>,
}

impl VocabularyFile {
    pub fn into_vocabulary(self) -> Result<KeywordVocabulary> {
        let members = self
            .members
            .iter()
            .map(|(k, c)| Ok((k.clone(), c.resolve(&self.categories)?)))
            .collect::<Result<IndexMap<_, _>>>()?;
        let has_images = self.has_images.unwrap_or(self.domain.default_has_images());
        KeywordVocabulary::new(
            self.categories,
            members,
            self.domain,
            has_images,
            self.has_speech.unwrap_or(true),
        )
    }

    pub fn from_vocabulary(v: &KeywordVocabulary) -> Self {
        Self {
            domain: v.domain,
            categories: v.categories().to_vec(),
            members: v
                .members()
                .iter()
                .map(|(k, &i)| (k.clone(), CategoryRef::Name(v.categories()[i].clone())))
                .collect(),
            has_images: Some(v.has_images),
            has_speech: Some(v.has_speech),
        }
    }
}

/// On-disk ground-truth JSON: euphemism → category (index or name).
pub type GroundTruthFile = IndexMap<String, CategoryRef>;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KomeiError::io(path, e))
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<KeywordVocabulary> {
    let path = path.as_ref();
    let file: VocabularyFile = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| KomeiError::Format(format!("{}: {e}", path.display())))?;
    file.into_vocabulary()
}

pub fn load_ground_truth(path: impl AsRef<Path>, categories: &[String]) -> Result<GroundTruthMap> {
    let path = path.as_ref();
    let file: GroundTruthFile = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| KomeiError::Format(format!("{}: {e}", path.display())))?;
    let entries = file
        .iter()
        .map(|(k, c)| Ok((k.clone(), c.resolve(categories)?)))
        .collect::<Result<IndexMap<_, _>>>()?;
    GroundTruthMap::new(entries, categories.len())
}

/// One JSON object per line, fields in canonical order.
pub fn corpus_to_jsonl(samples: &[MaskedSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serialises"));
        out.push('\n');
    }
    out
}

pub fn corpus_from_jsonl(text: &str) -> Result<Vec<MaskedSample>> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: MaskedSample = serde_json::from_str(line).map_err(|e| KomeiError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        sample.validate().map_err(|e| KomeiError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_corpus(samples: &[MaskedSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus_to_jsonl(samples)).map_err(|e| KomeiError::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<MaskedSample>> {
    corpus_from_jsonl(&read_to_string(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, MASK};

    #[test]
    fn field_order_is_canonical() {
        let s = MaskedSample {
            id: "k000001.0".into(),
            tokens: vec!["a".into(), MASK.into()],
            label: None,
            media_key: "ice".into(),
            split: Split::Test,
        };
        assert_eq!(
            corpus_to_jsonl(&[s]),
            "{\"id\":\"k000001.0\",\"tokens\":[\"a\",\"[MASK]\"],\"label\":null,\"media_key\":\"ice\",\"split\":\"test\"}\n"
        );
    }

    #[test]
    fn missing_tokens_reports_line() {
        let text = "{\"id\":\"a\",\"tokens\":[\"[MASK]\"],\"label\":0,\"media_key\":\"k\",\"split\":\"train\"}\n\
                    {\"id\":\"b\",\"label\":0,\"media_key\":\"k\",\"split\":\"train\"}\n";
        match corpus_from_jsonl(text) {
            Err(KomeiError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("tokens"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn double_mask_rejected_on_read() {
        let text = "{\"id\":\"a\",\"tokens\":[\"[MASK]\",\"[MASK]\"],\"label\":0,\"media_key\":\"k\",\"split\":\"train\"}\n";
        assert!(matches!(corpus_from_jsonl(text), Err(KomeiError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_text_is_empty_corpus() {
        assert!(corpus_from_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn vocabulary_file_accepts_names_and_indices() {
        let json = r#"{"domain":"sexuality","categories":["a","b"],"members":{"x":"b","y":0}}"#;
        let f: VocabularyFile = serde_json::from_str(json).unwrap();
        let v = f.into_vocabulary().unwrap();
        assert_eq!(v.members()["x"], 1);
        assert_eq!(v.members()["y"], 0);
        assert!(!v.has_images);
        assert!(v.has_speech);
    }
}
