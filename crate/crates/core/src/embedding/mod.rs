//! Sentence embeddings: the matrix type, its on-disk format, similarity
//! primitives, and the remote provider client.

mod remote;

pub use remote::{EmbeddingCache, ProviderConfig, RemoteEmbedder};

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MFTE";
const VERSION: u16 = 1;
const FLAG_NORMALIZED: u16 = 1;
const NORM_TOLERANCE: f64 = 1e-6;

/// Anything that maps texts to fixed-dimension vectors, row i for text i.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Row-per-item dense vectors with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Invalid(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            ids,
            data,
            dim,
            normalized: false,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            data: Vec::new(),
            dim,
            normalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Rows for `ids`, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<EmbeddingMatrix> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let i = *index.get(id.as_str()).ok_or_else(|| Error::UnknownId(id.clone()))?;
            data.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingMatrix {
            ids: ids.to_vec(),
            data,
            dim: self.dim,
            normalized: self.normalized,
        })
    }

    /// Coordinate-wise mean of all rows.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Binary layout: magic `MFTE`, u16 version, u16 flags, u32 dim, u64 count,
    /// then `count` ids (u32 byte length + UTF-8), then row-major f32 data.
    /// All integers and floats little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let flags = if self.normalized { FLAG_NORMALIZED } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::CacheFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != VERSION {
            return Err(Error::CacheFormat(format!("unsupported version {version}")));
        }
        let flags = u16::from_le_bytes(cur.array()?);
        let dim = u32::from_le_bytes(cur.array()?) as usize;
        let count = u64::from_le_bytes(cur.array()?);
        // Every id costs at least 4 bytes, which bounds `count` before allocating.
        if count > (cur.remaining() / 4) as u64 {
            return Err(Error::CacheFormat(format!("count {count} exceeds file size")));
        }
        let count = count as usize;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(cur.array()?) as usize;
            let raw = cur.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|_| Error::CacheFormat("id is not UTF-8".into()))?;
            ids.push(id.to_string());
        }
        let floats = count
            .checked_mul(dim)
            .filter(|n| n.checked_mul(4) == Some(cur.remaining()))
            .ok_or_else(|| Error::CacheFormat("data section length does not match dim × count".into()))?;
        let mut data = Vec::with_capacity(floats);
        for _ in 0..floats {
            data.push(f32::from_le_bytes(cur.array()?) as f64);
        }
        let m = EmbeddingMatrix {
            ids,
            data,
            dim,
            normalized: flags & FLAG_NORMALIZED != 0,
        };
        if m.normalized {
            m.check_normalized()?;
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// `id,v1..vd` CSV for inspection.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend((1..=self.dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| format!("{}", *v as f32)));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
    }

    /// Rounds every entry to the on-disk float width, so in-memory values
    /// survive a save/load cycle unchanged.
    pub fn quantized(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        self
    }

    fn check_normalized(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            let norm = l2(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Invalid(format!(
                    "row `{}` has norm {norm}, expected unit length",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::CacheFormat("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine that treats a zero vector as dissimilar to everything.
pub fn cosine_or_zero(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).unwrap_or(0.0)
}

/// Divides every row by its Euclidean norm.
pub fn normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut out = m.clone();
    for i in 0..m.len() {
        let norm = l2(m.row(i));
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        out.data[i * m.dim..(i + 1) * m.dim]
            .iter_mut()
            .for_each(|v| *v /= norm);
    }
    out.normalized = true;
    Ok(out)
}

/// Embeds `texts` and labels the rows with `ids`.
pub fn embed_matrix(embedder: &dyn Embedder, ids: Vec<String>, texts: &[String]) -> Result<EmbeddingMatrix> {
    if texts.is_empty() {
        return Ok(EmbeddingMatrix::empty(0));
    }
    let rows = embedder.embed(texts)?;
    EmbeddingMatrix::new(ids, rows)
}
