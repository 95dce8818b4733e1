//! Shared domain types and the similarity math used by every other module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a stored vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Inputs whose L2 norm falls below this have no usable direction.
const DEGENERATE_NORM: f64 = 1e-12;

/// A unit-norm vector in the shared image/text latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Scales `raw` to unit length. The norm is computed in `f64`.
    pub fn normalize(raw: &[f32], dim: usize) -> Result<Self> {
        if raw.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: raw.len() });
        }
        check_finite(raw)?;
        let norm = l2_norm(raw);
        if norm < DEGENERATE_NORM {
            return Err(Error::DegenerateVector { id: None });
        }
        let values = raw.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
        Ok(Self { values })
    }

    /// Wraps values that are expected to already be unit-norm.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        check_finite(&values)?;
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NormViolation { row: 0, norm });
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.values
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

/// Free-function form of [`Embedding::normalize`].
pub fn normalize(raw: &[f32], dim: usize) -> Result<Embedding> {
    Embedding::normalize(raw, dim)
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

/// Dot product of two equal-length `f32` slices accumulated in `f64`.
///
/// Each `f32 * f32` product is exact in `f64`; eight independent lanes keep the
/// loop vectorizable.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let a_chunks = a.chunks_exact(8);
    let b_chunks = b.chunks_exact(8);
    let tail: f64 = a_chunks
        .remainder()
        .iter()
        .zip(b_chunks.remainder())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    for (xa, xb) in a_chunks.zip(b_chunks) {
        for lane in 0..8 {
            acc[lane] += f64::from(xa[lane]) * f64::from(xb[lane]);
        }
    }
    let paired = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (paired[0] + paired[2]) + (paired[1] + paired[3]) + tail
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { id: None, index }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality {other:?} (expected \"image\" or \"text\")")),
        }
    }
}

/// One stored gallery item. Serializes to exactly one `manifest.jsonl` line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryRecord {
    pub id: String,
    pub row: usize,
    #[serde(rename = "class")]
    pub class_label: String,
    pub modality: Modality,
    pub uri: String,
    pub caption: Option<String>,
}

/// A single retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedHit {
    pub record_id: String,
    pub class_label: String,
    pub row: usize,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// A disease class suggested by a ranked result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDisease {
    #[serde(rename = "class")]
    pub class_label: String,
    pub score: f64,
    pub support: usize,
}

/// Folds ranked hits into one candidate per class.
///
/// A candidate's score is the best hit score of its class and its support is
/// the number of hits of that class. Output is ordered by score descending,
/// then class label ascending.
pub fn aggregate_candidates(hits: &[RankedHit]) -> Vec<CandidateDisease> {
    let mut by_class: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for hit in hits {
        by_class
            .entry(hit.class_label.as_str())
            .and_modify(|(best, support)| {
                *best = best.max(hit.score);
                *support += 1;
            })
            .or_insert((hit.score, 1));
    }
    let mut candidates: Vec<_> = by_class
        .into_iter()
        .map(|(class_label, (score, support))| CandidateDisease {
            class_label: class_label.to_owned(),
            score,
            support,
        })
        .collect();
    // BTreeMap iteration already yields labels ascending; a stable sort keeps that for ties.
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    candidates
}
