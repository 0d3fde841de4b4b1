use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{tokenize, GroundTruthMap, KeywordVocabulary, MaskedSample, Split, MASK};
use crate::error::{KomeiError, Result};

/// Finds non-overlapping keyword occurrences in a token list.
///
/// Patterns are tried longest first; equal lengths keep their insertion
/// order, so earlier vocabulary entries win ties.
#[derive(Clone, Debug)]
pub struct KeywordMatcher {
    patterns: Vec<Pattern>,
}

#[derive(Clone, Debug)]
struct Pattern {
    tokens: Vec<String>,
    surface: String,
    category: usize,
}

/// A matched span `[start, start + len)` and the entry it matched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occurrence<'a> {
    pub start: usize,
    pub len: usize,
    pub surface: &'a str,
    pub category: usize,
}

impl KeywordMatcher {
    pub fn new<'a, I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (&'a String, &'a usize)>,
    {
        let mut patterns: Vec<Pattern> = entries
            .into_iter()
            .map(|(surface, &category)| Pattern {
                tokens: tokenize(surface),
                surface: surface.clone(),
                category,
            })
            .filter(|p| !p.tokens.is_empty())
            .collect();
        // stable: ties keep vocabulary order
        patterns.sort_by_key(|p| std::cmp::Reverse(p.tokens.len()));
        Self { patterns }
    }

    pub fn find<'s>(&'s self, tokens: &[String]) -> Vec<Occurrence<'s>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self
                .patterns
                .iter()
                .find(|p| tokens[i..].starts_with(&p.tokens));
            match hit {
                Some(p) => {
                    out.push(Occurrence {
                        start: i,
                        len: p.tokens.len(),
                        surface: &p.surface,
                        category: p.category,
                    });
                    i += p.tokens.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

fn mask_span(tokens: &[String], start: usize, len: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 1 - len);
    out.extend_from_slice(&tokens[..start]);
    out.push(MASK.to_string());
    out.extend_from_slice(&tokens[start + len..]);
    out
}

fn emit<S: AsRef<str>>(sentences: &[S], matcher: &KeywordMatcher, id_prefix: &str, split: Split) -> Vec<MaskedSample> {
    let mut samples = Vec::new();
    for (si, sentence) in sentences.iter().enumerate() {
        let tokens = tokenize(sentence.as_ref());
        if tokens.iter().any(|t| t == MASK) {
            warn!("sentence {si} already contains {MASK}; skipped");
            continue;
        }
        for (oi, occ) in matcher.find(&tokens).into_iter().enumerate() {
            samples.push(MaskedSample {
                id: format!("{id_prefix}{si:06}.{oi}"),
                tokens: mask_span(&tokens, occ.start, occ.len),
                label: Some(occ.category),
                media_key: occ.surface.to_string(),
                split,
            });
        }
    }
    samples
}

/// One training sample per keyword occurrence, the occurrence masked and
/// labeled with its category. Sentences without a keyword are dropped.
pub fn build_training_set<S: AsRef<str>>(sentences: &[S], vocab: &KeywordVocabulary) -> Result<Vec<MaskedSample>> {
    if vocab.is_empty() {
        return Err(KomeiError::Config("keyword vocabulary is empty".into()));
    }
    let matcher = KeywordMatcher::new(vocab.members());
    Ok(emit(sentences, &matcher, "k", Split::Train))
}

/// Same masking rule keyed on euphemism surfaces; media is keyed by the
/// euphemism itself.
pub fn build_test_set<S: AsRef<str>>(
    sentences: &[S],
    euphemisms: &GroundTruthMap,
    vocab: Option<&KeywordVocabulary>,
) -> Result<Vec<MaskedSample>> {
    if euphemisms.is_empty() {
        return Err(KomeiError::Config("ground-truth map is empty".into()));
    }
    if let Some(v) = vocab {
        for surface in euphemisms.entries().keys() {
            if v.members().contains_key(surface) {
                warn!("euphemism {surface:?} is also a target keyword; treated as a test occurrence");
            }
        }
    }
    let matcher = KeywordMatcher::new(euphemisms.entries());
    Ok(emit(sentences, &matcher, "e", Split::Test))
}

/// Number of training samples for `ratio · n`, rounded up. Products that are
/// integers up to float noise (0.7 · 10) are not bumped.
fn train_count(ratio: f64, n: usize) -> usize {
    let x = ratio * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Seeded shuffle, then the first `⌈ratio·N⌉` samples go to train.
pub fn split(samples: Vec<MaskedSample>, ratio: f64, seed: u64) -> Result<(Vec<MaskedSample>, Vec<MaskedSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(KomeiError::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if samples.is_empty() {
        return Err(KomeiError::Data("cannot split an empty corpus".into()));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(ratio, n).min(n);
    if n_train == n {
        warn!("split of {n} samples at ratio {ratio} leaves the validation set empty");
    }
    let mut slots: Vec<Option<MaskedSample>> = samples.into_iter().map(Some).collect();
    let mut take = |i: usize, split: Split| {
        let mut s = slots[i].take().expect("each index taken once");
        s.split = split;
        s
    };
    let train = order[..n_train].iter().map(|&i| take(i, Split::Train)).collect();
    let val = order[n_train..].iter().map(|&i| take(i, Split::Val)).collect();
    Ok((train, val))
}
