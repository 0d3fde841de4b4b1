//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "KOMC" | version u32 = 1 | manifest_len u64 | manifest (UTF-8 JSON)
//! then every parameter in manifest order: rows × cols × f64
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::Model;
use crate::encoders::TextVocab;
use crate::error::{KomeiError, Result};
use crate::numerics::Tensor2;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KOMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: String,
    pub config_hash: String,
    pub categories: Vec<String>,
    pub text_vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

impl Model {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.to_text(),
            config_hash: self.config.hash(),
            categories: self.categories.clone(),
            text_vocab: self.vocab.tokens().to_vec(),
            tensors: self
                .store
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, p) in self.store.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |offset: usize, what: &str| KomeiError::Truncated {
            offset,
            message: format!("checkpoint ends inside {what}"),
        };
        if bytes.len() < 16 {
            return Err(truncated(bytes.len(), "header"));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(KomeiError::Format("not a checkpoint: bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(KomeiError::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize
            .checked_add(len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| truncated(16, "manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..body])
            .map_err(|e| KomeiError::Format(format!("checkpoint manifest: {e}")))?;
        let config = TrainConfig::parse(&manifest.config)?;
        if config.hash() != manifest.config_hash {
            return Err(KomeiError::Format("manifest config hash does not match its config".into()));
        }
        let vocab = TextVocab::from_tokens(manifest.text_vocab)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = Model::init(config, manifest.categories, vocab, &mut rng)?;
        let expected: Vec<TensorEntry> = model.manifest().tensors;
        if expected != manifest.tensors {
            return Err(KomeiError::Format(
                "checkpoint tensors do not match the architecture its config describes".into(),
            ));
        }
        let mut pos = body;
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        for (id, entry) in ids.into_iter().zip(&expected) {
            let n = entry.rows * entry.cols;
            let end = pos + n * 8;
            if end > bytes.len() {
                return Err(truncated(pos, &entry.name));
            }
            let data: Vec<f64> = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.store.set_value(id, Tensor2::new(entry.rows, entry.cols, data)?)?;
            pos = end;
        }
        if pos != bytes.len() {
            return Err(KomeiError::Format(format!("{} trailing bytes in checkpoint", bytes.len() - pos)));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| KomeiError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| KomeiError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
