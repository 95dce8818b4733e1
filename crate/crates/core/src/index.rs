//! Exact top-k cosine retrieval by exhaustive scan of every stored row.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dot, l2_norm, Embedding, GalleryRecord, Modality, RankedHit, NORM_TOLERANCE};

/// An immutable, validated gallery held in memory.
///
/// `vectors` is a row-major `count x dim` block; `records[i].row == i`.
#[derive(Debug, Clone)]
pub struct IndexSnapshot {
    dim: usize,
    vectors: Vec<f32>,
    records: Vec<GalleryRecord>,
    by_id: HashMap<String, usize>,
}

/// Validates records against a vector block and freezes them into a snapshot.
///
/// Records may arrive in any order; their `row` fields must form exactly
/// `0..count`.
pub fn build_snapshot(records: Vec<GalleryRecord>, vectors: Vec<f32>, dim: usize) -> Result<IndexSnapshot> {
    IndexSnapshot::new(records, vectors, dim)
}

impl IndexSnapshot {
    pub fn new(mut records: Vec<GalleryRecord>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvariantViolation("dimension must be positive".into()));
        }
        let count = records.len();
        if vectors.len() != count * dim {
            return Err(Error::DimensionMismatch { expected: count * dim, actual: vectors.len() });
        }

        records.sort_by_key(|r| r.row);
        for (position, record) in records.iter().enumerate() {
            if record.row != position {
                let detail = if record.row < position {
                    format!("row {} appears more than once", record.row)
                } else {
                    format!("row {position} is missing")
                };
                return Err(Error::ManifestGap { count, detail });
            }
            if record.class_label.is_empty() {
                return Err(Error::InvariantViolation(format!("record {:?} has an empty class label", record.id)));
            }
        }

        let mut by_id = HashMap::with_capacity(count);
        for record in &records {
            if by_id.insert(record.id.clone(), record.row).is_some() {
                return Err(Error::DuplicateId(record.id.clone()));
            }
        }

        for (row, values) in vectors.chunks_exact(dim).enumerate() {
            if let Some(index) = values.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { id: Some(records[row].id.clone()), index });
            }
            let norm = l2_norm(values);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::NormViolation { row, norm });
            }
        }

        Ok(Self { dim, vectors, records, by_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[GalleryRecord] {
        &self.records
    }

    /// The raw little-endian-agnostic `f32` block, row-major.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row_vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn record(&self, row: usize) -> &GalleryRecord {
        &self.records[row]
    }

    pub fn find(&self, id: &str) -> Option<&GalleryRecord> {
        self.by_id.get(id).map(|&row| &self.records[row])
    }

    /// The stored vector for `id` as an [`Embedding`].
    pub fn embedding(&self, id: &str) -> Option<Embedding> {
        let row = *self.by_id.get(id)?;
        Some(Embedding::from_unit(self.row_vector(row).to_vec()).expect("rows are validated unit-norm"))
    }

    /// Record counts per class label, sorted by label.
    pub fn class_counts(&self) -> Vec<(String, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for record in &self.records {
            *counts.entry(record.class_label.as_str()).or_insert(0usize) += 1;
        }
        counts.into_iter().map(|(label, n)| (label.to_owned(), n)).collect()
    }

    fn eligible(&self, record: &GalleryRecord, query: &QuerySpec) -> bool {
        if query.exclude_id.as_deref() == Some(record.id.as_str()) {
            return false;
        }
        if let Some(modality) = query.modality_filter {
            if record.modality != modality {
                return false;
            }
        }
        match &query.class_filter {
            Some(classes) => classes.contains(&record.class_label),
            None => true,
        }
    }
}

/// What to search for and which records may be returned.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub vector: Embedding,
    pub k: usize,
    pub exclude_id: Option<String>,
    pub class_filter: Option<BTreeSet<String>>,
    pub modality_filter: Option<Modality>,
}

impl QuerySpec {
    pub fn new(vector: Embedding, k: usize) -> Self {
        Self { vector, k, exclude_id: None, class_filter: None, modality_filter: None }
    }

    pub fn excluding(mut self, id: impl Into<String>) -> Self {
        self.exclude_id = Some(id.into());
        self
    }

    pub fn with_classes<I, S>(mut self, classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.class_filter = Some(classes.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_modality(mut self, modality: Option<Modality>) -> Self {
        self.modality_filter = modality;
        self
    }
}

/// Heap entry ordered so that the *worst* candidate is the maximum: lower
/// score first, and among equal scores the larger id.
struct Scored<'a> {
    score: f64,
    id: &'a str,
    row: usize,
}

impl Ord for Scored<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Scored<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Scored<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored<'_> {}

/// A gallery row and its similarity to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredRow {
    pub row: usize,
    pub score: f64,
}

/// Returns the `k` eligible records most similar to the query, best first.
///
/// Ties on score are broken by ascending record id.
pub fn search(snapshot: &IndexSnapshot, query: &QuerySpec) -> Result<Vec<RankedHit>> {
    Ok(search_rows(snapshot, query)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let record = &snapshot.records[s.row];
            RankedHit {
                record_id: record.id.clone(),
                class_label: record.class_label.clone(),
                row: s.row,
                score: s.score,
                rank: i + 1,
            }
        })
        .collect())
}

/// [`search`] without materializing hits: rows and scores, best first.
pub fn search_rows(snapshot: &IndexSnapshot, query: &QuerySpec) -> Result<Vec<ScoredRow>> {
    if query.vector.dim() != snapshot.dim {
        return Err(Error::DimensionMismatch { expected: snapshot.dim, actual: query.vector.dim() });
    }
    let k = query.k.min(snapshot.count());
    if k == 0 {
        return Ok(Vec::new());
    }
    let q = query.vector.as_slice();
    let scored = snapshot
        .records
        .iter()
        .zip(snapshot.vectors.chunks_exact(snapshot.dim))
        .filter(|(record, _)| snapshot.eligible(record, query))
        .map(|(record, row)| Scored { score: dot(q, row), id: &record.id, row: record.row });

    // Small k keeps a bounded heap; deep rankings select then sort.
    let best: Vec<Scored<'_>> = if k < snapshot.count() / 8 {
        let mut heap: BinaryHeap<Scored<'_>> = BinaryHeap::with_capacity(k + 1);
        for candidate in scored {
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(mut worst) = heap.peek_mut() {
                if candidate < *worst {
                    *worst = candidate;
                }
            }
        }
        heap.into_sorted_vec()
    } else {
        let mut all: Vec<Scored<'_>> = scored.collect();
        if k < all.len() {
            all.select_nth_unstable(k - 1);
            all.truncate(k);
        }
        all.sort_unstable();
        all
    };
    Ok(best.into_iter().map(|s| ScoredRow { row: s.row, score: s.score }).collect())
}

/// Runs [`search`] for every query in parallel. Output order follows input order.
pub fn search_batch(snapshot: &IndexSnapshot, queries: &[QuerySpec]) -> Result<Vec<Vec<RankedHit>>> {
    if let Some(index) = queries.iter().position(|q| q.vector.dim() != snapshot.dim) {
        let source = Error::DimensionMismatch { expected: snapshot.dim, actual: queries[index].vector.dim() };
        return Err(Error::BatchQuery { index, source: Box::new(source) });
    }
    queries
        .par_iter()
        .enumerate()
        .map(|(index, q)| search(snapshot, q).map_err(|e| Error::BatchQuery { index, source: Box::new(e) }))
        .collect()
}
