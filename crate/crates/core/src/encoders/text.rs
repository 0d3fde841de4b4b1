use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{MaskedSample, MASK};
use crate::error::{KomeiError, Result};
use crate::numerics::param::init;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor2, Var};

pub const UNK: &str = "[UNK]";

/// Token → row of the text embedding table. Ids 0 and 1 are always `[UNK]`
/// and `[MASK]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TextVocab {
    pub const UNK_ID: usize = 0;
    pub const MASK_ID: usize = 1;

    /// Vocabulary over the samples' tokens in first-appearance order.
    pub fn build<'a, I>(samples: I) -> Self
    where
        I: IntoIterator<Item = &'a MaskedSample>,
    {
        let mut tokens = vec![UNK.to_string(), MASK.to_string()];
        let mut index: HashMap<String, usize> = tokens.iter().cloned().zip(0..).collect();
        for s in samples {
            for t in &s.tokens {
                if !index.contains_key(t) {
                    index.insert(t.clone(), tokens.len());
                    tokens.push(t.clone());
                }
            }
        }
        Self { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != MASK {
            return Err(KomeiError::Format("text vocabulary must start with [UNK], [MASK]".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(KomeiError::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Embedding-bag text encoder: mean of token embeddings, then a two-layer
/// MLP into the common feature space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextEncoderIds {
    pub embedding: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl TextEncoderIds {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        vocab_len: usize,
        d_t: usize,
        d_g: usize,
    ) -> Result<Self> {
        Ok(Self {
            embedding: store.add("text.embedding", init::normal(rng, vocab_len, d_t, 1.0 / (d_t as f64).sqrt()), true)?,
            w1: store.add("text.w1", init::glorot(rng, d_t, d_g), true)?,
            b1: store.add("text.b1", Tensor2::zeros(1, d_g), true)?,
            w2: store.add("text.w2", init::glorot(rng, d_g, d_g), true)?,
            b2: store.add("text.b2", Tensor2::zeros(1, d_g), true)?,
        })
    }

    /// Encodes a batch of token-id lists into `B × d_g`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &[Vec<usize>]) -> Result<Var> {
        let mut flat = Vec::new();
        let mut segments = Vec::with_capacity(batch.len());
        for (i, ids) in batch.iter().enumerate() {
            if ids.is_empty() {
                return Err(KomeiError::Domain(format!("sample {i} has an empty token list")));
            }
            segments.push(flat.len()..flat.len() + ids.len());
            flat.extend_from_slice(ids);
        }
        let table = tape.param(store, self.embedding);
        let rows = tape.gather_rows(table, flat)?;
        let pooled = tape.segment_mean(rows, segments)?;
        let (w1, b1, w2, b2) = (
            tape.param(store, self.w1),
            tape.param(store, self.b1),
            tape.param(store, self.w2),
            tape.param(store, self.b2),
        );
        let hidden = tape.linear(pooled, w1, b1)?;
        let hidden = tape.relu(hidden);
        tape.linear(hidden, w2, b2)
    }
}

/// Value-level text encoding of one token list.
pub fn encode_text(tokens: &[String], vocab: &TextVocab, store: &ParamStore, ids: &TextEncoderIds) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(KomeiError::Domain("cannot encode an empty token list".into()));
    }
    let mut tape = Tape::new();
    let out = ids.forward(&mut tape, store, &[vocab.ids(tokens)])?;
    Ok(tape.value(out).row(0).to_vec())
}
