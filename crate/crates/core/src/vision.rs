//! Frozen 512-dimensional image embeddings: a deterministic toy encoder, a
//! binary importer for precomputed vectors, and dot-product retrieval.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::raster::{square_luma, Raster};

pub const EMBED_DIM: usize = 512;
const TOY_SIDE: u32 = 16;
const TOY_INPUTS: usize = (TOY_SIDE * TOY_SIDE) as usize;
const FILE_MAGIC: &[u8; 4] = b"ATTE";

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("embedding file: bad magic")]
    BadMagic,
    #[error("duplicate embedding id {0}")]
    DuplicateId(String),
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding {0} has a zero or non-finite norm")]
    Degenerate(String),
    #[error("nearest-neighbor index is empty")]
    EmptyIndex,
    #[error("embedding file: id is not valid UTF-8")]
    BadId,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Unit-norm image embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub image_id: String,
    pub vec: Vec<f64>,
}

impl ImageEmbedding {
    /// Normalizes `vec` to unit length.
    pub fn new(image_id: impl Into<String>, mut vec: Vec<f64>) -> Result<Self, VisionError> {
        let image_id = image_id.into();
        let norm = vec.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(VisionError::Degenerate(image_id));
        }
        vec.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { image_id, vec })
    }

    pub fn dot(&self, other: &ImageEmbedding) -> f64 {
        dot(&self.vec, &other.vec)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random projection from a 16×16 luma thumbnail to [`EMBED_DIM`] dimensions.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    /// Row-major `EMBED_DIM × 256`, standard normal entries.
    projection: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..EMBED_DIM * TOY_INPUTS)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { projection }
    }

    pub fn encode(&self, image: &Raster, image_id: impl Into<String>) -> ImageEmbedding {
        let pixels: Vec<f64> = square_luma(image, TOY_SIDE)
            .into_iter()
            .map(|p| p as f64 / 255.0)
            .collect();
        let mut out: Vec<f64> = self
            .projection
            .chunks_exact(TOY_INPUTS)
            .map(|row| dot(row, &pixels))
            .collect();
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        } else {
            // An all-black image projects to zero; pin it to the first axis.
            out[0] = 1.0;
        }
        ImageEmbedding {
            image_id: image_id.into(),
            vec: out,
        }
    }
}

pub fn toy_encode(image: &Raster, image_id: impl Into<String>, seed: u64) -> ImageEmbedding {
    ToyEncoder::new(seed).encode(image, image_id)
}

pub fn write_embeddings<W: Write>(mut w: W, embeddings: &[ImageEmbedding]) -> io::Result<()> {
    w.write_all(FILE_MAGIC)?;
    w.write_all(&(embeddings.len() as u32).to_le_bytes())?;
    w.write_all(&(EMBED_DIM as u32).to_le_bytes())?;
    for e in embeddings {
        let id = e.image_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "image id longer than 65535 bytes"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        for &v in &e.vec {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads an embedding file, re-normalizing every vector.
pub fn load_embeddings<R: Read>(mut r: R) -> Result<BTreeMap<String, ImageEmbedding>, VisionError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FILE_MAGIC {
        return Err(VisionError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    if dim != EMBED_DIM {
        return Err(VisionError::DimensionMismatch {
            expected: EMBED_DIM,
            found: dim,
        });
    }
    let mut out = BTreeMap::new();
    let mut raw = vec![0u8; dim * 4];
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| VisionError::BadId)?;
        r.read_exact(&mut raw)?;
        let vec = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if out.contains_key(&id) {
            return Err(VisionError::DuplicateId(id));
        }
        let e = ImageEmbedding::new(id.clone(), vec)?;
        out.insert(id, e);
    }
    Ok(out)
}

/// Index entry with the largest dot product; ties go to the smallest ID.
pub fn nearest_neighbor<'a>(
    query: &ImageEmbedding,
    index: &'a [ImageEmbedding],
) -> Result<&'a ImageEmbedding, VisionError> {
    let mut best: Option<(&ImageEmbedding, f64)> = None;
    for e in index {
        let score = query.dot(e);
        best = match best {
            Some((b, s)) if s > score || (s == score && b.image_id <= e.image_id) => Some((b, s)),
            _ => Some((e, score)),
        };
    }
    best.map(|(e, _)| e).ok_or(VisionError::EmptyIndex)
}

/// Checks that IDs in an index are unique.
pub fn check_unique(index: &[ImageEmbedding]) -> Result<(), VisionError> {
    let mut seen = HashSet::new();
    for e in index {
        if !seen.insert(e.image_id.as_str()) {
            return Err(VisionError::DuplicateId(e.image_id.clone()));
        }
    }
    Ok(())
}
