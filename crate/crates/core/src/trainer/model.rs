//! The trainable model: text encoder, evidence projections, fusion head and
//! keyword classifier over one parameter store.

use rand::Rng;

use super::config::TrainConfig;
use super::media::MediaBank;
use crate::corpus::MaskedSample;
use crate::encoders::{Modality, ProjectionIds, TextEncoderIds, TextVocab};
use crate::error::{KomeiError, Result};
use crate::fusion::{contrastive_align_loss, match_matrix, BranchInput, FusionParams};
use crate::numerics::param::init;
use crate::numerics::{self, ParamId, ParamStore, Tape, Tensor2, Var};
use crate::prediction::{prediction_loss, total_loss_var, ClassifierIds};

/// How the fused feature `H` is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// `H = T`.
    TextOnly,
    /// `H` = mean of the pooled projected evidence of each enabled modality.
    EvidenceOnly,
    /// `H = (T ; Ī ; S̄)·W_H + b_H`, absent modalities zero-padded.
    Concat { w_h: ParamId, b_h: ParamId },
    /// Cross-attention stack.
    Stack(FusionParams),
}

impl Head {
    pub fn name(&self) -> &'static str {
        match self {
            Head::TextOnly => "text-only",
            Head::EvidenceOnly => "evidence-only",
            Head::Concat { .. } => "concat",
            Head::Stack(_) => "stack",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub categories: Vec<String>,
    pub vocab: TextVocab,
    pub store: ParamStore,
    pub text: Option<TextEncoderIds>,
    pub image_proj: Option<ProjectionIds>,
    pub speech_proj: Option<ProjectionIds>,
    pub head: Head,
    pub classifier: ClassifierIds,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub h: Var,
    pub logits: Var,
    pub l_ti: Option<Var>,
    pub l_ts: Option<Var>,
}

/// Loss nodes of one training batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub j: Var,
    pub l_p: Var,
    pub l_ti: Option<Var>,
    pub l_ts: Option<Var>,
}

struct Evidence {
    projected: Var,
    segments: Vec<std::ops::Range<usize>>,
}

impl Model {
    /// Registers every parameter in a fixed order and initializes it from `rng`.
    pub fn init<R: Rng + ?Sized>(
        config: TrainConfig,
        categories: Vec<String>,
        vocab: TextVocab,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let text = if c.text {
            Some(TextEncoderIds::register(&mut store, rng, vocab.len(), c.d_t, c.d_g)?)
        } else {
            None
        };
        let image_proj = if c.image {
            Some(ProjectionIds::register(&mut store, rng, "image.proj", c.d_v, c.d_g)?)
        } else {
            None
        };
        let speech_proj = if c.speech {
            Some(ProjectionIds::register(&mut store, rng, "speech.proj", c.d_s, c.d_g)?)
        } else {
            None
        };
        let evidence = c.image || c.speech;
        let head = if !c.text {
            Head::EvidenceOnly
        } else if !evidence {
            Head::TextOnly
        } else if c.ca {
            Head::Stack(FusionParams::register(
                &mut store,
                rng,
                c.d_g,
                c.image,
                c.speech,
                c.stack_flags(),
                c.share_an,
            )?)
        } else {
            Head::Concat {
                w_h: store.add("fusion.w_h", init::glorot(rng, 3 * c.d_g, c.d_g), true)?,
                b_h: store.add("fusion.b_h", Tensor2::zeros(1, c.d_g), true)?,
            }
        };
        let classifier = ClassifierIds::register(&mut store, rng, categories.len(), c.d_g)?;
        Ok(Self {
            config,
            categories,
            vocab,
            store,
            text,
            image_proj,
            speech_proj,
            head,
            classifier,
        })
    }

    fn evidence(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &[&MaskedSample],
        media: &MediaBank,
        modality: Modality,
    ) -> Result<Option<Evidence>> {
        let (proj, dim) = match modality {
            Modality::Image => (self.image_proj, self.config.d_v),
            Modality::Speech => (self.speech_proj, self.config.d_s),
        };
        let Some(proj) = proj else { return Ok(None) };
        let stacked = media.stack(modality, batch, dim, self.config.speech_pool)?;
        let raw = tape.constant(stacked.rows);
        Ok(Some(Evidence {
            projected: proj.forward(tape, store, raw)?,
            segments: stacked.segments,
        }))
    }

    /// Forward pass with an explicit parameter store. Alignment losses are
    /// built only when `with_alignment` is set and CFA is enabled.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &[&MaskedSample],
        media: &MediaBank,
        with_alignment: bool,
    ) -> Result<Forward> {
        if batch.is_empty() {
            return Err(KomeiError::Data("empty batch".into()));
        }
        let c = &self.config;
        let text = match self.text {
            Some(ids) => {
                let token_ids: Vec<Vec<usize>> = batch.iter().map(|s| self.vocab.ids(&s.tokens)).collect();
                Some(ids.forward(tape, store, &token_ids)?)
            }
            None => None,
        };
        let image = self.evidence(tape, store, batch, media, Modality::Image)?;
        let speech = self.evidence(tape, store, batch, media, Modality::Speech)?;
        let needs_pool = with_alignment && c.cfa || matches!(self.head, Head::EvidenceOnly | Head::Concat { .. });
        let pool = |tape: &mut Tape, e: &Option<Evidence>| -> Result<Option<Var>> {
            match e {
                Some(e) if needs_pool => Ok(Some(tape.segment_mean(e.projected, e.segments.clone())?)),
                _ => Ok(None),
            }
        };
        let pooled_i = pool(tape, &image)?;
        let pooled_s = pool(tape, &speech)?;

        let (mut l_ti, mut l_ts) = (None, None);
        if with_alignment && c.cfa {
            let t = text.ok_or_else(|| KomeiError::Config("alignment needs the text stream".into()))?;
            let keys: Vec<&str> = batch.iter().map(|s| s.media_key.as_str()).collect();
            let matches = match_matrix(&keys);
            if let Some(e) = pooled_i {
                l_ti = Some(contrastive_align_loss(tape, t, e, &matches, c.alignment())?);
            }
            if let Some(e) = pooled_s {
                l_ts = Some(contrastive_align_loss(tape, t, e, &matches, c.alignment())?);
            }
        }

        let h = match self.head {
            Head::TextOnly => text.expect("text-only head has a text stream"),
            Head::EvidenceOnly => match (pooled_i, pooled_s) {
                (Some(a), Some(b)) => {
                    let sum = tape.add(a, b)?;
                    tape.scale(sum, 0.5)
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!("validated config has an evidence modality"),
            },
            Head::Concat { w_h, b_h } => {
                let t = text.expect("concat head has a text stream");
                let zeros = || Tensor2::zeros(batch.len(), c.d_g);
                let i = pooled_i.unwrap_or_else(|| tape.constant(zeros()));
                let s = pooled_s.unwrap_or_else(|| tape.constant(zeros()));
                let ti = tape.concat_cols(t, i)?;
                let tis = tape.concat_cols(ti, s)?;
                let (w, b) = (tape.param(store, w_h), tape.param(store, b_h));
                tape.linear(tis, w, b)?
            }
            Head::Stack(params) => {
                let t = text.expect("stack head has a text stream");
                let branch = |e: Option<Evidence>| {
                    e.map(|e| BranchInput {
                        evidence: e.projected,
                        segments: e.segments,
                    })
                };
                params.forward(tape, store, t, branch(image), branch(speech), c.an_eps)?
            }
        };
        let logits = self.classifier.logits(tape, store, h)?;
        Ok(Forward { h, logits, l_ti, l_ts })
    }

    /// Training objective `J` of one labeled batch.
    pub fn loss_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        batch: &[&MaskedSample],
        media: &MediaBank,
    ) -> Result<BatchLoss> {
        let gold = gold_labels(batch)?;
        let fwd = self.forward_with(store, tape, batch, media, true)?;
        let l_p = prediction_loss(tape, fwd.logits, &gold)?;
        let j = total_loss_var(tape, l_p, fwd.l_ti, fwd.l_ts, self.config.loss_weights())?;
        Ok(BatchLoss {
            j,
            l_p,
            l_ti: fwd.l_ti,
            l_ts: fwd.l_ts,
        })
    }

    fn run_chunks<F>(&self, samples: &[MaskedSample], media: &MediaBank, cols: usize, mut pick: F) -> Result<Tensor2>
    where
        F: FnMut(&Tape, &Forward) -> Result<Tensor2>,
    {
        let mut parts = Vec::new();
        for chunk in samples.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&MaskedSample> = chunk.iter().collect();
            let mut tape = Tape::new();
            let fwd = self.forward_with(&self.store, &mut tape, &refs, media, false)?;
            parts.push(pick(&tape, &fwd)?);
        }
        Tensor2::stack_rows(cols, parts.iter())
    }

    /// Class probabilities (`N × n`), inference path only.
    pub fn predict(&self, samples: &[MaskedSample], media: &MediaBank) -> Result<Tensor2> {
        self.run_chunks(samples, media, self.categories.len(), |tape, f| {
            numerics::softmax_rows(tape.value(f.logits))
        })
    }

    /// Fused features `H` (`N × d_g`).
    pub fn features(&self, samples: &[MaskedSample], media: &MediaBank) -> Result<Tensor2> {
        self.run_chunks(samples, media, self.config.d_g, |tape, f| Ok(tape.value(f.h).clone()))
    }

    /// Trainable scalars whose parameter name satisfies `pred`.
    pub fn count_params(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.store
            .iter()
            .filter(|(_, p)| p.trainable && pred(&p.name))
            .map(|(_, p)| p.value.len())
            .sum()
    }
}

pub(crate) fn gold_labels(batch: &[&MaskedSample]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| KomeiError::Data(format!("sample {} has no label", s.id)))
        })
        .collect()
}
