use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::VerificationError;

pub const FACE_DIM: usize = 512;
pub const VOICE_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Face,
    Voice,
    /// Text encoder output; the dimension is encoder-defined.
    Text(usize),
}

impl Modality {
    pub fn dim(self) -> usize {
        match self {
            Modality::Face => FACE_DIM,
            Modality::Voice => VOICE_DIM,
            Modality::Text(d) => d,
        }
    }

    fn code(self) -> u32 {
        match self {
            Modality::Face => 0,
            Modality::Voice => 1,
            Modality::Text(_) => 2,
        }
    }

    fn from_code(code: u32, dim: usize) -> Option<Self> {
        match code {
            0 => Some(Modality::Face),
            1 => Some(Modality::Voice),
            2 => Some(Modality::Text(dim)),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Face => f.write_str("face"),
            Modality::Voice => f.write_str("voice"),
            Modality::Text(d) => write!(f, "text{d}"),
        }
    }
}

/// An embedding vector tagged with its modality. Values are stored as `f32`
/// (the on-disk precision); arithmetic is done in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEmbedding", into = "RawEmbedding")]
pub struct Embedding {
    values: Vec<f32>,
    modality: Modality,
    norm: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEmbedding {
    modality: Modality,
    values: Vec<f32>,
}

impl TryFrom<RawEmbedding> for Embedding {
    type Error = VerificationError;

    fn try_from(raw: RawEmbedding) -> Result<Self, Self::Error> {
        Embedding::new(raw.values, raw.modality)
    }
}

impl From<Embedding> for RawEmbedding {
    fn from(e: Embedding) -> Self {
        RawEmbedding { modality: e.modality, values: e.values }
    }
}

impl Embedding {
    pub fn new(values: Vec<f32>, modality: Modality) -> Result<Self, VerificationError> {
        if values.len() != modality.dim() {
            return Err(VerificationError::DimensionMismatch { expected: modality.dim(), found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VerificationError::NonFinite);
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        Ok(Self { values, modality, norm })
    }

    /// Builds from `f64` values, rounding to `f32`.
    pub fn from_f64(values: &[f64], modality: Modality) -> Result<Self, VerificationError> {
        Self::new(values.iter().map(|&v| v as f32).collect(), modality)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
    }

    /// Element-wise mean of `items`; `None` when empty.
    pub fn mean(items: &[Embedding]) -> Option<Result<Embedding, VerificationError>> {
        let first = items.first()?;
        let mut acc = vec![0f64; first.dim()];
        for e in items {
            if e.modality != first.modality {
                return Some(Err(VerificationError::ModalityMismatch { expected: first.modality, found: e.modality }));
            }
            for (a, &v) in acc.iter_mut().zip(&e.values) {
                *a += f64::from(v);
            }
        }
        let n = items.len() as f64;
        let mean: Vec<f64> = acc.into_iter().map(|a| a / n).collect();
        Some(Embedding::from_f64(&mean, first.modality))
    }
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, VerificationError> {
    if a.dim() != b.dim() {
        return Err(VerificationError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    if a.norm == 0.0 || b.norm == 0.0 {
        return Err(VerificationError::ZeroNorm);
    }
    Ok((a.dot(b) / (a.norm * b.norm)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64, VerificationError> {
    cosine_similarity(a, b).map(|s| 1.0 - s)
}

/// Writes `embeddings` as `count: u32, dim: u32, modality: u32` followed by
/// little-endian `f32` values. All embeddings must share one modality.
pub fn write_embeddings<W: Write>(mut out: W, embeddings: &[Embedding], modality: Modality) -> io::Result<()> {
    out.write_all(&(embeddings.len() as u32).to_le_bytes())?;
    out.write_all(&(modality.dim() as u32).to_le_bytes())?;
    out.write_all(&modality.code().to_le_bytes())?;
    for e in embeddings {
        if e.modality != modality {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} embedding in a {} block", e.modality, modality),
            ));
        }
        for v in &e.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads one block written by [`write_embeddings`].
pub fn read_embeddings<R: Read>(mut input: R) -> Result<(Modality, Vec<Embedding>), VerificationError> {
    let mut header = [0u8; 12];
    input.read_exact(&mut header).map_err(|e| VerificationError::EmbeddingFile(e.to_string()))?;
    let count = u32::from_le_bytes(header[0..4].try_into().expect("4")) as usize;
    let dim = u32::from_le_bytes(header[4..8].try_into().expect("4")) as usize;
    let code = u32::from_le_bytes(header[8..12].try_into().expect("4"));
    let modality = Modality::from_code(code, dim)
        .ok_or_else(|| VerificationError::EmbeddingFile(format!("unknown modality code {code}")))?;
    if modality.dim() != dim {
        return Err(VerificationError::DimensionMismatch { expected: modality.dim(), found: dim });
    }
    let mut buf = vec![0u8; dim * 4];
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        input
            .read_exact(&mut buf)
            .map_err(|e| VerificationError::EmbeddingFile(format!("embedding {i} of {count}: {e}")))?;
        let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
        out.push(Embedding::new(values, modality)?);
    }
    Ok((modality, out))
}
