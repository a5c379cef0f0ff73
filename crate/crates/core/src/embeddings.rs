//! Per-sentence embedding sources.
//!
//! Binary file layout, all integers little-endian:
//!
//! ```text
//! magic "MARROEMB" (8 bytes) | version u32 = 1 | dim u32 | count u64
//! count × { doc_id_len u16 | doc_id utf-8 | sentence_index u32 | dim × f32 }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MARROEMB";
pub const VERSION: u32 = 1;

/// Anything that maps `(doc_id, sentence_index, text)` to a fixed-width vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, doc_id: &str, index: usize, text: &str) -> Result<Vec<f64>>;
}

/// Row `t` of the result is the embedding of sentence `t`.
pub fn embed_document(p: &dyn EmbeddingProvider, d: &Document) -> Result<Tensor> {
    let dim = p.dim();
    let mut data = Vec::with_capacity(d.len() * dim);
    for s in &d.sentences {
        let v = p.embed(&d.doc_id, s.index, &s.text)?;
        if v.len() != dim {
            return Err(Error::Shape(format!(
                "provider returned {} values, expected {dim}",
                v.len()
            )));
        }
        data.extend(v);
    }
    Tensor::matrix(d.len(), dim, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub doc_id: String,
    pub index: u32,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingFile {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    lookup: HashMap<(String, u32), usize>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, index: u32, values: Vec<f32>) -> Result<()> {
        let doc_id = doc_id.into();
        if values.len() != self.dim {
            return Err(Error::EmbeddingFormat(format!(
                "record ({doc_id:?}, {index}) has {} values, header dim is {}",
                values.len(),
                self.dim
            )));
        }
        if doc_id.len() > u16::MAX as usize {
            return Err(Error::EmbeddingFormat("doc_id longer than 65535 bytes".into()));
        }
        let key = (doc_id.clone(), index);
        if self.lookup.contains_key(&key) {
            return Err(Error::EmbeddingFormat(format!(
                "duplicate key ({doc_id:?}, {index})"
            )));
        }
        self.lookup.insert(key, self.records.len());
        self.records.push(EmbeddingRecord {
            doc_id,
            index,
            values,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, doc_id: &str, index: usize) -> Option<&[f32]> {
        let index = u32::try_from(index).ok()?;
        self.lookup
            .get(&(doc_id.to_string(), index))
            .map(|&i| self.records[i].values.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.records.len() * (10 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.doc_id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.doc_id.as_bytes());
            out.extend_from_slice(&r.index.to_le_bytes());
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::EmbeddingFormat("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::EmbeddingFormat(format!(
                "version {version}, expected {VERSION}"
            )));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let mut file = Self::new(dim);
        for _ in 0..count {
            let len = cur.u16()? as usize;
            let doc_id = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::EmbeddingFormat("doc_id is not utf-8".into()))?
                .to_string();
            let index = cur.u32()?;
            let raw = cur.take(dim * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            file.insert(doc_id, index, values)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::EmbeddingFormat(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - cur.pos
            )));
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingFile::from_bytes(&bytes)
}

impl EmbeddingProvider for EmbeddingFile {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, doc_id: &str, index: usize, _text: &str) -> Result<Vec<f64>> {
        self.get(doc_id, index)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .ok_or_else(|| Error::MissingEmbedding {
                doc_id: doc_id.to_string(),
                index,
            })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::EmbeddingFormat(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Deterministic bag-of-tokens embedder used in tests and synthetic runs.
///
/// Each lowercased whitespace token seeds SplitMix64 with its FNV-1a-64 hash
/// and contributes `dim` values in `[-1, 1)`; token vectors are averaged and
/// the mean is L2-normalized (unless it is zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let lowered = text.to_lowercase();
        let mut tokens = 0usize;
        for tok in lowered.split_whitespace() {
            tokens += 1;
            let mut rng = SplitMix64::new(fnv1a64(tok.as_bytes()));
            for a in acc.iter_mut() {
                *a += rng.next_signed();
            }
        }
        if tokens == 0 {
            return acc;
        }
        for a in acc.iter_mut() {
            *a /= tokens as f64;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in acc.iter_mut() {
                *a /= norm;
            }
        }
        acc
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _doc_id: &str, _index: usize, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_text(text))
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
