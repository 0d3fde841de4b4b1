//! KOME embedding files: frozen per-keyword evidence vectors.
//!
//! Layout (little-endian):
//!
//! ```text
//! "KOME" | version u32 = 1 | modality u8 (1 image, 2 speech) | dim u32 | entry_count u32
//! entry: key_len u16 | key (UTF-8) | vec_count u16 | vec_count × dim × f32
//! ```
//!
//! Values are stored as `f32` and widened to `f64` on load; writing narrows
//! them back, which is exact for anything that came from a file.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{KomeiError, Result};
use crate::numerics::Tensor2;

pub const KOME_MAGIC: &[u8; 4] = b"KOME";
pub const KOME_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    Speech,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Image => 1,
            Modality::Speech => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Modality::Image),
            2 => Some(Modality::Speech),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Speech => "speech",
        }
    }
}

/// Surface keyword → sequence of evidence vectors (one row per image or per
/// speech frame). Never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    modality: Modality,
    dim: usize,
    entries: IndexMap<String, Tensor2>,
}

impl EmbeddingTable {
    pub fn new(modality: Modality, dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(KomeiError::Config(format!("embedding dim {dim} out of range")));
        }
        Ok(Self {
            modality,
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Option<&Tensor2> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Adds an entry. Values are rounded through `f32` so the in-memory table
    /// always equals what a file round trip would produce.
    pub fn insert(&mut self, key: impl Into<String>, vectors: &Tensor2) -> Result<()> {
        let key = key.into();
        if self.entries.contains_key(&key) {
            return Err(KomeiError::Format(format!("duplicate key {key:?}")));
        }
        if key.len() > u16::MAX as usize {
            return Err(KomeiError::Format(format!("key of {} bytes is too long", key.len())));
        }
        if vectors.rows() == 0 || vectors.rows() > u16::MAX as usize {
            return Err(KomeiError::Format(format!(
                "entry {key:?} has {} vectors; need 1..=65535",
                vectors.rows()
            )));
        }
        if vectors.cols() != self.dim {
            return Err(KomeiError::Config(format!(
                "entry {key:?} has dim {}, table dim is {}",
                vectors.cols(),
                self.dim
            )));
        }
        let narrowed = vectors.map(|v| v as f32 as f64);
        if !narrowed.all_finite() {
            return Err(KomeiError::NonFinite(format!("entry {key:?} overflows f32")));
        }
        self.entries.insert(key, narrowed);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(KOME_MAGIC);
        out.extend_from_slice(&KOME_VERSION.to_le_bytes());
        out.push(self.modality.code());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (key, vecs) in &self.entries {
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(vecs.rows() as u16).to_le_bytes());
            for &v in vecs.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != KOME_MAGIC {
            return Err(KomeiError::Format(format!("bad magic {magic:?}, expected \"KOME\"")));
        }
        let version = r.u32("version")?;
        if version != KOME_VERSION {
            return Err(KomeiError::Format(format!("unsupported version {version}")));
        }
        let code = r.u8("modality")?;
        let modality =
            Modality::from_code(code).ok_or_else(|| KomeiError::Format(format!("unknown modality code {code}")))?;
        let dim = r.u32("dim")? as usize;
        let count = r.u32("entry_count")? as usize;
        let mut table = Self::new(modality, dim).map_err(|e| KomeiError::Format(e.to_string()))?;
        for _ in 0..count {
            let key_len = r.u16("key_len")? as usize;
            let key_bytes = r.take(key_len, "key")?;
            let key = std::str::from_utf8(key_bytes)
                .map_err(|e| KomeiError::Format(format!("key at byte {} is not UTF-8: {e}", r.pos - key_len)))?
                .to_string();
            if table.entries.contains_key(&key) {
                return Err(KomeiError::Format(format!("duplicate key {key:?}")));
            }
            let vec_count = r.u16("vec_count")? as usize;
            if vec_count == 0 {
                return Err(KomeiError::Format(format!("entry {key:?} has no vectors")));
            }
            let raw = r.take(vec_count * dim * 4, "vector data")?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let vecs = Tensor2::new(vec_count, dim, data)
                .map_err(|e| KomeiError::Format(format!("entry {key:?}: {e}")))?;
            table.entries.insert(key, vecs);
        }
        if r.pos != bytes.len() {
            return Err(KomeiError::Format(format!(
                "{} trailing bytes after {count} entries",
                bytes.len() - r.pos
            )));
        }
        Ok(table)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| KomeiError::io(path, e))
    }
}

pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| KomeiError::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(KomeiError::Truncated {
                offset: self.pos,
                message: format!("need {n} bytes for {what}, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
