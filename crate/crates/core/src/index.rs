//! Exact inner-product index over QA-bank question embeddings.
//!
//! Vectors live in one contiguous row-major `f32` buffer and every search is
//! a full linear scan, so results are exact. Hits are ordered by descending
//! score with ties broken by ascending `qa_id`.
//!
//! File layout (`bank.index`, little endian):
//!
//! ```text
//! magic      8 bytes  "HRAGIDX1"
//! version    u32
//! dim        u32
//! count      u64
//! fp_len     u32, then fp_len bytes of embedder fingerprint (UTF-8)
//! trailer    u64 byte length of the JSON metadata trailer
//! checksum   32 bytes SHA-256 over every other byte of the file
//! vectors    count * dim f32
//! trailer    JSON { config_hash, entries: [{qa_id, answer, node_id, doc_id}] }
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{dot, Embedder, EmbeddingVector, ProviderError};
use crate::qagen::QAPair;

pub const INDEX_FILE: &str = "bank.index";
const MAGIC: &[u8; 8] = b"HRAGIDX1";
const VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("bank is empty")]
    EmptyBank,
    #[error("index is empty")]
    EmptyIndex,
    #[error("duplicate qa_id {0}")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("vector for {0} is not unit-norm")]
    NotUnitNorm(String),
    #[error("k must be >= 1")]
    InvalidK,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index built with embedder {stored:?}, configured embedder is {configured:?}")]
    FingerprintMismatch { stored: String, configured: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaMeta {
    pub answer: String,
    pub node_id: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub qa_id: String,
    pub score: f32,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QAIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    meta: HashMap<String, QaMeta>,
    fingerprint: String,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct TrailerEntry {
    qa_id: String,
    answer: String,
    node_id: String,
    doc_id: String,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    config_hash: String,
    entries: Vec<TrailerEntry>,
}

impl QAIndex {
    pub fn new(dim: usize, fingerprint: impl Into<String>) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            meta: HashMap::new(),
            fingerprint: fingerprint.into(),
            config_hash: String::new(),
        }
    }

    pub fn insert(&mut self, qa_id: &str, vector: &EmbeddingVector, meta: QaMeta) -> Result<(), IndexError> {
        if vector.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if (vector.l2_norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(IndexError::NotUnitNorm(qa_id.to_string()));
        }
        if self.meta.contains_key(qa_id) {
            return Err(IndexError::DuplicateId(qa_id.to_string()));
        }
        self.ids.push(qa_id.to_string());
        self.vectors.extend_from_slice(vector.values());
        self.meta.insert(qa_id.to_string(), meta);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn set_config_hash(&mut self, hash: impl Into<String>) {
        self.config_hash = hash.into();
    }

    pub fn meta(&self, qa_id: &str) -> Option<&QaMeta> {
        self.meta.get(qa_id)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// Exact top-k by inner product.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = query.values();
        let mut scored: Vec<(f32, usize)> = self
            .vectors
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(row, v)| (dot(v, q), row))
            .collect();
        let order = |a: &(f32, usize), b: &(f32, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, row))| ScoredHit {
                qa_id: self.ids[row].clone(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let trailer = Trailer {
            config_hash: self.config_hash.clone(),
            entries: self
                .ids
                .iter()
                .map(|id| {
                    let m = &self.meta[id];
                    TrailerEntry {
                        qa_id: id.clone(),
                        answer: m.answer.clone(),
                        node_id: m.node_id.clone(),
                        doc_id: m.doc_id.clone(),
                    }
                })
                .collect(),
        };
        let trailer = serde_json::to_vec(&trailer).expect("trailer serializes");

        let mut head = Vec::new();
        head.extend_from_slice(MAGIC);
        head.extend_from_slice(&VERSION.to_le_bytes());
        head.extend_from_slice(&(self.dim as u32).to_le_bytes());
        head.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        head.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        head.extend_from_slice(self.fingerprint.as_bytes());
        head.extend_from_slice(&(trailer.len() as u64).to_le_bytes());

        let mut body = Vec::with_capacity(self.vectors.len() * 4 + trailer.len());
        for v in &self.vectors {
            body.extend_from_slice(&v.to_le_bytes());
        }
        body.extend_from_slice(&trailer);

        let checksum = Sha256::new().chain_update(&head).chain_update(&body).finalize();
        let mut out = head;
        out.extend_from_slice(&checksum);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<QAIndex, IndexError> {
        let corrupt = |m: &str| IndexError::CorruptIndex(m.to_string());
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| corrupt("truncated header"))? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
        if version != VERSION {
            return Err(IndexError::CorruptIndex(format!("unsupported version {version}")));
        }
        let dim = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
        let count = r.u64().ok_or_else(|| corrupt("truncated header"))? as usize;
        let fp_len = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
        let fingerprint = r.take(fp_len).ok_or_else(|| corrupt("truncated header"))?;
        let fingerprint = String::from_utf8(fingerprint.to_vec()).map_err(|_| corrupt("fingerprint not UTF-8"))?;
        let trailer_len = r.u64().ok_or_else(|| corrupt("truncated header"))? as usize;
        let head_end = r.pos;
        let checksum = r.take(32).ok_or_else(|| corrupt("truncated header"))?;
        let vec_bytes = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt("size overflow"))?;
        let expected_len = r.pos.checked_add(vec_bytes).and_then(|n| n.checked_add(trailer_len));
        if expected_len != Some(bytes.len()) {
            return Err(IndexError::CorruptIndex(format!(
                "file is {} bytes, header describes {expected_len:?}",
                bytes.len()
            )));
        }
        let body = &bytes[r.pos..];
        let actual = Sha256::new()
            .chain_update(&bytes[..head_end])
            .chain_update(body)
            .finalize();
        if actual.as_slice() != checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let vectors: Vec<f32> = body[..vec_bytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let trailer: Trailer = serde_json::from_slice(&body[vec_bytes..])
            .map_err(|e| IndexError::CorruptIndex(format!("trailer: {e}")))?;
        if trailer.entries.len() != count {
            return Err(corrupt("entry count does not match vectors"));
        }
        let mut index = QAIndex::new(dim, fingerprint);
        index.config_hash = trailer.config_hash;
        for (row, e) in trailer.entries.into_iter().enumerate() {
            let v = EmbeddingVector(vectors[row * dim..(row + 1) * dim].to_vec());
            let meta = QaMeta {
                answer: e.answer,
                node_id: e.node_id,
                doc_id: e.doc_id,
            };
            index
                .insert(&e.qa_id, &v, meta)
                .map_err(|err| IndexError::CorruptIndex(err.to_string()))?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("index.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads an index and, when `configured_fingerprint` is given, requires
    /// it to match the stored one unless `force` is set.
    pub fn load(path: &Path, configured_fingerprint: Option<&str>, force: bool) -> Result<QAIndex, IndexError> {
        let index = Self::from_bytes(&std::fs::read(path)?)?;
        if let Some(fp) = configured_fingerprint {
            if fp != index.fingerprint && !force {
                return Err(IndexError::FingerprintMismatch {
                    stored: index.fingerprint,
                    configured: fp.to_string(),
                });
            }
        }
        Ok(index)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Embeds every question in batches of `batch_size` and indexes it.
pub fn build_index(pairs: &[QAPair], embedder: &dyn Embedder, batch_size: usize) -> Result<QAIndex, IndexError> {
    if pairs.is_empty() {
        return Err(IndexError::EmptyBank);
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.qa_id.as_str())) {
        return Err(IndexError::DuplicateId(dup.qa_id.clone()));
    }
    let mut index: Option<QAIndex> = None;
    for batch in pairs.chunks(batch_size.max(1)) {
        let texts: Vec<String> = batch.iter().map(|p| p.question.clone()).collect();
        let vectors = embedder.embed(&texts)?;
        let idx = index.get_or_insert_with(|| {
            QAIndex::new(vectors[0].dim(), embedder.fingerprint())
        });
        for (p, v) in batch.iter().zip(&vectors) {
            idx.insert(
                &p.qa_id,
                v,
                QaMeta {
                    answer: p.answer.clone(),
                    node_id: p.node_id.clone(),
                    doc_id: p.doc_id.clone(),
                },
            )?;
        }
    }
    Ok(index.expect("non-empty bank"))
}
