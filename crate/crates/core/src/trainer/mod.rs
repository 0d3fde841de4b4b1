//! Training, evaluation, checkpoints and ablation grids.

mod ablation;
mod checkpoint;
mod config;
mod eval;
mod media;
mod model;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ablation::{
    ablate_components, ablate_modalities, component_grid, format_ablation_table, modality_grid, write_ablation_csv,
    AblationData, AblationRow, ParamAudit,
};
pub use checkpoint::{Manifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DataPaths, TrainConfig};
pub use eval::{evaluate, evaluate_scores, write_features, write_sample_predictions};
pub use media::{MediaBank, StackedEvidence};
pub use model::{BatchLoss, Forward, Head, Model};
pub use train::{check_inputs, train, write_loss_curve, LossPoint, TrainOutcome};

use crate::corpus::{MaskedSample, Split, MASK};
use crate::encoders::TextVocab;
use crate::error::Result;
use crate::numerics::{grad_check, GradCheckReport};

/// Finite-difference check of the full objective `J` on a small
/// three-category batch with image and speech evidence and every fusion
/// component enabled.
pub fn gradcheck_full_objective(d_g: usize, batch: usize, seed: u64, h: f64) -> Result<GradCheckReport> {
    let config = TrainConfig {
        d_g,
        d_t: d_g,
        d_v: d_g,
        d_s: d_g,
        seed,
        toy_fallback: true,
        image_count: 3,
        tau: 0.5,
        ..TrainConfig::default()
    };
    let words = ["sold", "some", "cheap", "late", "got", "from", "him", "street"];
    let samples: Vec<MaskedSample> = (0..batch)
        .map(|i| {
            let mut tokens: Vec<String> = (0..3).map(|j| words[(i * 3 + j) % words.len()].to_string()).collect();
            tokens.insert(i % 4, MASK.to_string());
            MaskedSample {
                id: format!("g{i}"),
                tokens,
                label: Some(i % 3),
                media_key: format!("key{}", i % 3),
                split: Split::Train,
            }
        })
        .collect();
    let categories: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let media = MediaBank::toy(seed, config.image_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::init(config, categories, TextVocab::build(&samples), &mut rng)?;
    let refs: Vec<&MaskedSample> = samples.iter().collect();
    let mut store = model.store.clone();
    grad_check(&mut store, h, |s, tape| Ok(model.loss_with(s, tape, &refs, &media)?.j))
}
