//! Synthetic corpora with planted signal.
//!
//! * [`Scenario::Overfit`]: every category owns a block of context words, so
//!   text alone identifies the label.
//! * [`Scenario::ImagePlanted`] / [`Scenario::AudioPlanted`]: categories come
//!   in pairs sharing one context block, so text only identifies the pair.
//!   The planted modality gives every keyword of category `c` vectors near a
//!   per-category prototype; the other modality is keyword-hashed noise. Test
//!   sentences use euphemism surfaces never seen in training.
//!
//! Sentences go through the regular corpus builders, so the samples carry
//! the same masking, ids and splits as a real corpus.

use std::str::FromStr;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_test_set, build_training_set, split, Domain, GroundTruthMap, KeywordVocabulary, MaskedSample};
use crate::encoders::{toy_encode, unit_gaussian, EmbeddingTable, Modality};
use crate::error::{KomeiError, Result};
use crate::numerics::Tensor2;
use crate::trainer::MediaBank;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Overfit,
    ImagePlanted,
    AudioPlanted,
}

impl FromStr for Scenario {
    type Err = KomeiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overfit" => Ok(Scenario::Overfit),
            "image-planted" => Ok(Scenario::ImagePlanted),
            "audio-planted" => Ok(Scenario::AudioPlanted),
            other => Err(KomeiError::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Overfit => "overfit",
            Scenario::ImagePlanted => "image-planted",
            Scenario::AudioPlanted => "audio-planted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub scenario: Scenario,
    pub seed: u64,
    pub categories: usize,
    pub context_vocab: usize,
    /// Training sentences, each yielding one sample.
    pub samples: usize,
    pub test_samples: usize,
    pub keywords_per_category: usize,
    pub euphemisms_per_category: usize,
    pub context_len: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub image_count: usize,
    pub speech_frames: usize,
    /// Std of the noise added to planted prototypes (per vector, before
    /// normalization).
    pub noise: f64,
    pub split_ratio: f64,
}

impl SyntheticSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let categories = match scenario {
            Scenario::Overfit => 5,
            _ => 6,
        };
        Self {
            scenario,
            seed,
            categories,
            context_vocab: 50,
            samples: 200,
            test_samples: 120,
            keywords_per_category: 3,
            euphemisms_per_category: 2,
            context_len: 6,
            d_v: 16,
            d_s: 16,
            image_count: 4,
            speech_frames: 3,
            noise: 0.5,
            split_ratio: 0.8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub vocab: KeywordVocabulary,
    pub ground_truth: GroundTruthMap,
    pub train_sentences: Vec<String>,
    pub test_sentences: Vec<String>,
    pub train: Vec<MaskedSample>,
    pub val: Vec<MaskedSample>,
    pub test: Vec<MaskedSample>,
    pub image: EmbeddingTable,
    pub speech: EmbeddingTable,
}

impl SyntheticCorpus {
    /// Media bank over the generated tables, no fallback.
    pub fn media(&self) -> MediaBank {
        MediaBank {
            image: Some(self.image.clone()),
            speech: Some(self.speech.clone()),
            toy_fallback: false,
            toy_seed: 0,
            image_count: self.image.iter().next().map_or(1, |(_, v)| v.rows()),
        }
    }

    pub fn categories(&self) -> &[String] {
        self.vocab.categories()
    }
}

/// Context-word block of category `c`.
fn context_block(spec: &SyntheticSpec, c: usize) -> std::ops::Range<usize> {
    let groups = match spec.scenario {
        Scenario::Overfit => spec.categories,
        _ => spec.categories / 2,
    };
    let g = match spec.scenario {
        Scenario::Overfit => c,
        _ => c / 2,
    };
    let size = spec.context_vocab / groups;
    g * size..(g + 1) * size
}

fn sentence<R: Rng>(rng: &mut R, spec: &SyntheticSpec, c: usize, keyword: &str) -> String {
    let block = context_block(spec, c);
    let mut words: Vec<String> = (0..spec.context_len)
        .map(|i| {
            // one word in six is drawn from the whole vocabulary
            let idx = if i % 6 == 5 {
                rng.random_range(0..spec.context_vocab)
            } else {
                rng.random_range(block.clone())
            };
            format!("w{idx}")
        })
        .collect();
    let at = rng.random_range(0..=words.len());
    words.insert(at, keyword.to_string());
    words.join(" ")
}

fn planted_vectors<R: Rng>(rng: &mut R, prototype: &[f64], count: usize, noise: f64) -> Tensor2 {
    let dim = prototype.len();
    let rows: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let n = unit_gaussian(rng, dim);
            let v: Vec<f64> = prototype.iter().zip(&n).map(|(p, e)| p + noise * e).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Tensor2::from_rows(&rows).expect("finite planted vectors")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let paired = spec.scenario != Scenario::Overfit;
    if spec.categories == 0 || (paired && !spec.categories.is_multiple_of(2)) {
        return Err(KomeiError::Config("planted scenarios need an even, positive category count".into()));
    }
    let groups = if paired { spec.categories / 2 } else { spec.categories };
    if spec.context_vocab < groups || spec.keywords_per_category == 0 || spec.euphemisms_per_category == 0 {
        return Err(KomeiError::Config("synthetic spec too small".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let categories: Vec<String> = (0..spec.categories).map(|c| format!("target{c}")).collect();
    let keyword = |c: usize, j: usize| format!("kw{c}x{j}");
    let euphemism = |c: usize, j: usize| format!("eu{c}x{j}");
    let mut members = IndexMap::new();
    let mut gt = IndexMap::new();
    for c in 0..spec.categories {
        for j in 0..spec.keywords_per_category {
            members.insert(keyword(c, j), c);
        }
        for j in 0..spec.euphemisms_per_category {
            gt.insert(euphemism(c, j), c);
        }
    }
    let vocab = KeywordVocabulary::new(categories, members, Domain::Custom, true, true)?;
    let ground_truth = GroundTruthMap::new(gt, spec.categories)?;

    let mut gen_sentences = |n: usize, surface: &dyn Fn(usize, usize) -> String, per: usize| -> Vec<String> {
        (0..n)
            .map(|i| {
                let c = i % spec.categories;
                let j = rng.random_range(0..per);
                sentence(&mut rng, spec, c, &surface(c, j))
            })
            .collect()
    };
    let train_sentences = gen_sentences(spec.samples, &keyword, spec.keywords_per_category);
    let test_sentences = gen_sentences(spec.test_samples, &euphemism, spec.euphemisms_per_category);

    let all = build_training_set(&train_sentences, &vocab)?;
    let (train, val) = split(all, spec.split_ratio, spec.seed)?;
    let test = build_test_set(&test_sentences, &ground_truth, Some(&vocab))?;

    let mut image = EmbeddingTable::new(Modality::Image, spec.d_v)?;
    let mut speech = EmbeddingTable::new(Modality::Speech, spec.d_s)?;
    let image_protos: Vec<Vec<f64>> = (0..spec.categories).map(|_| unit_gaussian(&mut rng, spec.d_v)).collect();
    let speech_protos: Vec<Vec<f64>> = (0..spec.categories).map(|_| unit_gaussian(&mut rng, spec.d_s)).collect();
    let surfaces: Vec<(String, usize)> = vocab
        .members()
        .iter()
        .chain(ground_truth.entries())
        .map(|(s, &c)| (s.clone(), c))
        .collect();
    for (surface, c) in &surfaces {
        let img = if spec.scenario == Scenario::ImagePlanted {
            planted_vectors(&mut rng, &image_protos[*c], spec.image_count, spec.noise)
        } else {
            toy_encode(surface, Modality::Image, spec.d_v, spec.seed, spec.image_count)
        };
        let sp = if spec.scenario == Scenario::AudioPlanted {
            planted_vectors(&mut rng, &speech_protos[*c], spec.speech_frames, spec.noise)
        } else {
            toy_encode(surface, Modality::Speech, spec.d_s, spec.seed, spec.speech_frames)
        };
        image.insert(surface.clone(), &img)?;
        speech.insert(surface.clone(), &sp)?;
    }
    Ok(SyntheticCorpus {
        vocab,
        ground_truth,
        train_sentences,
        test_sentences,
        train,
        val,
        test,
        image,
        speech,
    })
}
