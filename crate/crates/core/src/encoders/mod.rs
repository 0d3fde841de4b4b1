//! Per-modality feature streams.
//!
//! Text goes through a small trainable encoder. Image and speech evidence is
//! frozen (loaded from KOME files or generated by [`toy_encode`]) and only
//! the projection into the common space is learned.

mod kome;
mod text;
mod toy;

use std::str::FromStr;

use rand::Rng;

pub use kome::{load_embedding_table, EmbeddingTable, Modality, KOME_MAGIC, KOME_VERSION};
pub use text::{encode_text, TextEncoderIds, TextVocab, UNK};
pub use toy::toy_encode;
pub(crate) use toy::unit_gaussian;

use crate::error::{KomeiError, Result};
use crate::numerics::param::init;
use crate::numerics::{self, ParamId, ParamStore, Tape, Tensor2, Var};

/// How a speech frame sequence becomes key/value rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeechPool {
    /// Average over time, one row per clip.
    Mean,
    /// Keep every frame.
    None,
}

impl FromStr for SpeechPool {
    type Err = KomeiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(SpeechPool::Mean),
            "none" => Ok(SpeechPool::None),
            other => Err(KomeiError::Config(format!("unknown speech pooling {other:?}"))),
        }
    }
}

impl SpeechPool {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeechPool::Mean => "mean",
            SpeechPool::None => "none",
        }
    }
}

/// Applies the pooling rule to a `T × d_s` frame matrix.
pub fn pool_speech(frames: &Tensor2, pool: SpeechPool) -> Result<Tensor2> {
    if frames.rows() == 0 {
        return Err(KomeiError::EmptyEvidence("speech clip with zero frames".into()));
    }
    match pool {
        SpeechPool::Mean => frames.mean_rows(),
        SpeechPool::None => Ok(frames.clone()),
    }
}

/// Trainable `ReLU(x·W + b)` projection from a source dimension to `d_g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjectionIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl ProjectionIds {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        d_in: usize,
        d_g: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{prefix}.w"), init::glorot(rng, d_in, d_g), true)?,
            b: store.add(format!("{prefix}.b"), Tensor2::zeros(1, d_g), true)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, evidence: Var) -> Result<Var> {
        let d_in = store.value(self.w).rows();
        if tape.shape(evidence).1 != d_in {
            return Err(KomeiError::Config(format!(
                "evidence dim {} does not match projection input dim {d_in}",
                tape.shape(evidence).1
            )));
        }
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let pre = tape.linear(evidence, w, b)?;
        Ok(tape.relu(pre))
    }
}

fn check_source_dim(vectors: &Tensor2, w: &Tensor2) -> Result<()> {
    if vectors.cols() != w.rows() {
        return Err(KomeiError::Config(format!(
            "evidence dim {} does not match projection input dim {}",
            vectors.cols(),
            w.rows()
        )));
    }
    Ok(())
}

/// Projects each image vector independently: `ReLU(Î·W_I + b_I)`.
pub fn project_image(vectors: &Tensor2, w: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    check_source_dim(vectors, w)?;
    Ok(numerics::relu(&numerics::linear(vectors, w, b)?))
}

/// Pools frames (or not) and projects: `ReLU(Ŝ·W_S + b_S)`.
pub fn project_speech(frames: &Tensor2, w: &Tensor2, b: &Tensor2, pool: SpeechPool) -> Result<Tensor2> {
    let pooled = pool_speech(frames, pool)?;
    check_source_dim(&pooled, w)?;
    Ok(numerics::relu(&numerics::linear(&pooled, w, b)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::{MaskedSample, Split, MASK};

    fn eye_slice(d_in: usize, d_out: usize) -> Tensor2 {
        let mut w = Tensor2::zeros(d_in, d_out);
        for i in 0..d_in.min(d_out) {
            w.set(i, i, 1.0).unwrap();
        }
        w
    }

    #[test]
    fn image_identity_projection_keeps_prefix() {
        let v = Tensor2::from_rows(&[[0.5, 2.0, 1.0], [0.0, 3.0, 4.0]]).unwrap();
        let out = project_image(&v, &eye_slice(3, 2), &Tensor2::zeros(1, 2)).unwrap();
        assert_eq!(out.to_rows(), vec![vec![0.5, 2.0], vec![0.0, 3.0]]);
    }

    #[test]
    fn image_negative_preactivation_is_zero() {
        let v = Tensor2::from_rows(&[[-1.0, -2.0]]).unwrap();
        let out = project_image(&v, &Tensor2::identity(2), &Tensor2::zeros(1, 2)).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn four_images_four_rows_and_dim_check() {
        let v = toy_encode("weed", Modality::Image, 6, 1, 4);
        let out = project_image(&v, &eye_slice(6, 3), &Tensor2::zeros(1, 3)).unwrap();
        assert_eq!(out.shape(), (4, 3));
        assert!(matches!(
            project_image(&v, &eye_slice(5, 3), &Tensor2::zeros(1, 3)),
            Err(KomeiError::Config(_))
        ));
    }

    #[test]
    fn speech_mean_pool() {
        let z = [0.25, -1.0, 2.0];
        let frames = Tensor2::from_rows(&[z, z, z]).unwrap();
        assert_eq!(pool_speech(&frames, SpeechPool::Mean).unwrap().data(), &z);
        let one = Tensor2::from_rows(&[[0.3, 0.7, -0.1]]).unwrap();
        let (w, b) = (Tensor2::identity(3), Tensor2::filled(1, 3, 0.1));
        assert_eq!(
            project_speech(&one, &w, &b, SpeechPool::Mean).unwrap(),
            project_speech(&one, &w, &b, SpeechPool::None).unwrap()
        );
        let neg = Tensor2::from_rows(&[[-0.3, -0.7, -0.2]]).unwrap();
        assert_eq!(project_speech(&neg, &w, &b, SpeechPool::Mean).unwrap().data(), &[0.0; 3]);
        assert!(matches!(
            pool_speech(&Tensor2::zeros(0, 3), SpeechPool::Mean),
            Err(KomeiError::EmptyEvidence(_))
        ));
    }

    #[test]
    fn projection_is_permutation_equivariant() {
        let v = toy_encode("ice", Modality::Image, 5, 9, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w, b) = (init::glorot(&mut rng, 5, 4), init::normal(&mut rng, 1, 4, 0.1));
        let out = project_image(&v, &w, &b).unwrap();
        let perm = [2, 0, 3, 1];
        let out_p = project_image(&v.select_rows(&perm), &w, &b).unwrap();
        assert_eq!(out_p, out.select_rows(&perm));
    }

    fn sample(tokens: &[&str]) -> MaskedSample {
        MaskedSample {
            id: "x".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            label: Some(0),
            media_key: "k".into(),
            split: Split::Train,
        }
    }

    #[test]
    fn text_encoder_contract() {
        let vocab = TextVocab::build([&sample(&["sold", MASK, "today"])]);
        assert_eq!(vocab.id("[UNK]"), TextVocab::UNK_ID);
        assert_eq!(vocab.id(MASK), TextVocab::MASK_ID);
        assert_eq!(vocab.id("never-seen"), TextVocab::UNK_ID);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ids = TextEncoderIds::register(&mut store, &mut rng, vocab.len(), 6, 4).unwrap();
        let toks: Vec<String> = ["sold", MASK, "today"].iter().map(|s| s.to_string()).collect();
        let a = encode_text(&toks, &vocab, &store, &ids).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, encode_text(&toks, &vocab, &store, &ids).unwrap());
        let unk1 = encode_text(&["zzz".to_string()], &vocab, &store, &ids).unwrap();
        let unk5 = encode_text(&vec!["q".to_string(); 5], &vocab, &store, &ids).unwrap();
        assert!(unk1.iter().zip(&unk5).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(matches!(encode_text(&[], &vocab, &store, &ids), Err(KomeiError::Domain(_))));
        // the mask token has its own embedding row
        let masked = encode_text(&[MASK.to_string()], &vocab, &store, &ids).unwrap();
        assert_ne!(masked, unk1);
    }

    #[test]
    fn text_vocab_round_trips_through_token_list() {
        let vocab = TextVocab::build([&sample(&["a", MASK, "b", "a"])]);
        assert_eq!(vocab.tokens(), ["[UNK]", MASK, "a", "b"]);
        assert_eq!(TextVocab::from_tokens(vocab.tokens().to_vec()).unwrap(), vocab);
        assert!(TextVocab::from_tokens(vec!["a".into()]).is_err());
    }
}
