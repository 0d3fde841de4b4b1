//! Per-sample evidence lookup.

use std::collections::BTreeSet;
use std::ops::Range;

use crate::corpus::MaskedSample;
use crate::encoders::{pool_speech, toy_encode, EmbeddingTable, Modality, SpeechPool};
use crate::error::{KomeiError, Result};
use crate::numerics::Tensor2;

/// Frozen evidence tables plus the optional hashed fallback for keys that
/// have no entry.
#[derive(Clone, Debug, Default)]
pub struct MediaBank {
    pub image: Option<EmbeddingTable>,
    pub speech: Option<EmbeddingTable>,
    /// Generate [`toy_encode`] vectors for keys absent from the tables.
    pub toy_fallback: bool,
    pub toy_seed: u64,
    /// Vectors per keyword for fallback images.
    pub image_count: usize,
}

/// Evidence rows of a batch, stacked, with each sample's row range.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedEvidence {
    pub rows: Tensor2,
    pub segments: Vec<Range<usize>>,
}

impl MediaBank {
    /// Bank that answers every lookup from [`toy_encode`].
    pub fn toy(seed: u64, image_count: usize) -> Self {
        Self {
            image: None,
            speech: None,
            toy_fallback: true,
            toy_seed: seed,
            image_count,
        }
    }

    fn table(&self, modality: Modality) -> Option<&EmbeddingTable> {
        match modality {
            Modality::Image => self.image.as_ref(),
            Modality::Speech => self.speech.as_ref(),
        }
    }

    /// Raw evidence rows for one key.
    pub fn lookup(&self, modality: Modality, key: &str, dim: usize) -> Result<Tensor2> {
        if let Some(table) = self.table(modality) {
            if table.dim() != dim {
                return Err(KomeiError::Config(format!(
                    "{} table has dim {}, config expects {dim}",
                    modality.name(),
                    table.dim()
                )));
            }
            if let Some(v) = table.get(key) {
                return Ok(v.clone());
            }
        }
        if self.toy_fallback {
            let count = match modality {
                Modality::Image => self.image_count.max(1),
                Modality::Speech => 1,
            };
            return Ok(toy_encode(key, modality, dim, self.toy_seed, count));
        }
        Err(KomeiError::Data(format!("no {} evidence for key {key:?}", modality.name())))
    }

    /// Fails with every unresolvable key listed when the fallback is off.
    pub fn check_keys(&self, modality: Modality, samples: &[MaskedSample]) -> Result<()> {
        if self.toy_fallback {
            return Ok(());
        }
        let missing: BTreeSet<&str> = samples
            .iter()
            .map(|s| s.media_key.as_str())
            .filter(|k| self.table(modality).is_none_or(|t| t.get(k).is_none()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(KomeiError::Data(format!(
                "{} missing {} evidence: {}",
                missing.len(),
                modality.name(),
                missing.into_iter().collect::<Vec<_>>().join(", ")
            )))
        }
    }

    /// Stacks the evidence of `batch`, pooling speech frames per `pool`.
    pub fn stack(
        &self,
        modality: Modality,
        batch: &[&MaskedSample],
        dim: usize,
        pool: SpeechPool,
    ) -> Result<StackedEvidence> {
        let mut parts = Vec::with_capacity(batch.len());
        let mut segments = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for s in batch {
            let raw = self.lookup(modality, &s.media_key, dim)?;
            let rows = match modality {
                Modality::Image => raw,
                Modality::Speech => pool_speech(&raw, pool)?,
            };
            segments.push(offset..offset + rows.rows());
            offset += rows.rows();
            parts.push(rows);
        }
        Ok(StackedEvidence {
            rows: Tensor2::stack_rows(dim, parts.iter())?,
            segments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, MASK};

    fn sample(key: &str) -> MaskedSample {
        MaskedSample {
            id: key.into(),
            tokens: vec![MASK.into()],
            label: Some(0),
            media_key: key.into(),
            split: Split::Train,
        }
    }

    #[test]
    fn table_entries_win_and_missing_keys_are_listed() {
        let mut t = EmbeddingTable::new(Modality::Image, 2).unwrap();
        t.insert("weed", &Tensor2::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let mut bank = MediaBank {
            image: Some(t),
            image_count: 4,
            ..Default::default()
        };
        let samples = [sample("weed"), sample("ice"), sample("nine")];
        match bank.check_keys(Modality::Image, &samples) {
            Err(KomeiError::Data(m)) => assert!(m.contains("ice, nine"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(bank.check_keys(Modality::Speech, &samples[..1]).is_err());
        bank.toy_fallback = true;
        bank.check_keys(Modality::Image, &samples).unwrap();
        let refs: Vec<&MaskedSample> = samples.iter().collect();
        let st = bank.stack(Modality::Image, &refs, 2, SpeechPool::Mean).unwrap();
        assert_eq!(st.segments, vec![0..2, 2..6, 6..10]);
        assert_eq!(st.rows.row(1), &[0.0, 1.0]);
        assert!(bank.lookup(Modality::Image, "weed", 3).is_err());
    }

    #[test]
    fn speech_is_pooled_per_sample() {
        let mut t = EmbeddingTable::new(Modality::Speech, 2).unwrap();
        t.insert("a", &Tensor2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        let bank = MediaBank {
            speech: Some(t),
            ..Default::default()
        };
        let s = sample("a");
        let st = bank.stack(Modality::Speech, &[&s, &s], 2, SpeechPool::Mean).unwrap();
        assert_eq!(st.rows.to_rows(), vec![vec![2.0, 3.0], vec![2.0, 3.0]]);
        assert_eq!(st.segments, vec![0..1, 1..2]);
        let st = bank.stack(Modality::Speech, &[&s], 2, SpeechPool::None).unwrap();
        assert_eq!(st.segments, vec![0..2]);
    }
}
