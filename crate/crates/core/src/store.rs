//! On-disk gallery layout: `manifest.jsonl` plus `vectors.bin`.
//!
//! `vectors.bin` is little-endian throughout:
//!
//! ```text
//! offset  size            field
//! 0       8               magic, ASCII "PWVEC001"
//! 8       4               dim   (u32)
//! 12      8               count (u64)
//! 20      4 * count * dim row-major f32 payload, every row unit-norm
//! ```
//!
//! `manifest.jsonl` holds one [`GalleryRecord`] per line, ordered by row.
//! Normalization happens only at ingestion; loading validates and never
//! rescales.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexSnapshot;
use crate::model::{Embedding, GalleryRecord, Modality};

pub const MAGIC: &[u8; 8] = b"PWVEC001";
pub const HEADER_LEN: u64 = 8 + 4 + 8;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const VECTORS_FILE: &str = "vectors.bin";

/// Exact size of a vector file holding `count` rows of `dim` components.
/// `None` when the size does not fit in a `u64`.
pub fn vector_file_len(dim: u64, count: u64) -> Option<u64> {
    count.checked_mul(dim)?.checked_mul(4)?.checked_add(HEADER_LEN)
}

/// Writes a gallery to `dir`, creating the directory if needed.
///
/// Inputs are validated with the same rules the loader applies; any failure
/// is reported as [`Error::InvariantViolation`] and nothing is written.
pub fn write_gallery(records: &[GalleryRecord], vectors: &[Embedding], dim: usize, dir: &Path) -> Result<()> {
    if records.len() != vectors.len() {
        return Err(Error::InvariantViolation(format!(
            "{} records but {} vectors",
            records.len(),
            vectors.len()
        )));
    }
    let mut block = Vec::with_capacity(vectors.len() * dim);
    for (record, v) in records.iter().zip(vectors) {
        if v.dim() != dim {
            return Err(Error::InvariantViolation(format!(
                "vector for {:?} has dimension {}, expected {dim}",
                record.id,
                v.dim()
            )));
        }
        block.extend_from_slice(v.as_slice());
    }
    // Vectors follow `records` order; place each at its record's row.
    let mut ordered = vec![0.0f32; block.len()];
    for (i, record) in records.iter().enumerate() {
        if record.row >= records.len() {
            return Err(Error::InvariantViolation(format!("row {} out of range for {:?}", record.row, record.id)));
        }
        ordered[record.row * dim..(record.row + 1) * dim].copy_from_slice(&block[i * dim..(i + 1) * dim]);
    }
    let snapshot = IndexSnapshot::new(records.to_vec(), ordered, dim)
        .map_err(|e| Error::InvariantViolation(e.to_string()))?;
    write_snapshot(&snapshot, dir)
}

/// Writes an already-validated snapshot to `dir`.
///
/// Each file is written beside its final name and renamed into place, so a
/// concurrent reader sees either the old or the new file, never a partial one.
pub fn write_snapshot(snapshot: &IndexSnapshot, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let vectors_path = dir.join(VECTORS_FILE);
    write_replacing(&vectors_path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&(snapshot.dim() as u32).to_le_bytes())?;
        w.write_all(&(snapshot.count() as u64).to_le_bytes())?;
        for x in snapshot.vectors() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    })?;

    let manifest_path = dir.join(MANIFEST_FILE);
    write_replacing(&manifest_path, |w| {
        for record in snapshot.records() {
            serde_json::to_writer(&mut *w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn write_replacing(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|()| w.flush())
        .and_then(|()| w.get_ref().sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses and validates a `vectors.bin` image, returning `(dim, count, payload)`.
pub fn decode_vector_block(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let actual = bytes.len() as u64;
    if bytes.len() < MAGIC.len() {
        return Err(Error::TruncatedFile { path: path.into(), expected: HEADER_LEN, actual });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if actual < HEADER_LEN {
        return Err(Error::TruncatedFile { path: path.into(), expected: HEADER_LEN, actual });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = vector_file_len(u64::from(dim), count).unwrap_or(u64::MAX);
    if expected != actual {
        return Err(Error::TruncatedFile { path: path.into(), expected, actual });
    }
    if dim == 0 {
        return Err(Error::InvariantViolation(format!("{}: header declares dimension 0", path.display())));
    }
    let payload = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((dim as usize, count as usize, payload))
}

/// Loads and validates the gallery stored in `dir`. The header of
/// `vectors.bin` is authoritative for dimension and count.
pub fn load_gallery(dir: &Path) -> Result<IndexSnapshot> {
    let vectors_path = dir.join(VECTORS_FILE);
    let bytes = fs::read(&vectors_path).map_err(|e| Error::io(&vectors_path, e))?;
    let (dim, count, payload) = decode_vector_block(&bytes, &vectors_path)?;
    drop(bytes);

    let manifest_path = dir.join(MANIFEST_FILE);
    let records: Vec<GalleryRecord> = read_jsonl(&manifest_path)?;
    if records.len() != count {
        return Err(Error::ManifestGap {
            count,
            detail: format!("manifest has {} entries, vector header declares {count}", records.len()),
        });
    }
    IndexSnapshot::new(records, payload, dim)
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// One line of an ingestion manifest. Rows are assigned by line order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestEntry {
    pub id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(default = "default_modality")]
    pub modality: Modality,
    #[serde(default)]
    pub uri: String,
    #[serde(default)]
    pub caption: Option<String>,
}

fn default_modality() -> Modality {
    Modality::Image
}

/// One line of a raw-vector file: `{"id": ..., "vector": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVector {
    pub id: String,
    pub vector: Vec<f32>,
}

/// Summary of a gallery: size, dimension and per-class counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub count: usize,
    pub dim: usize,
    pub per_class: BTreeMap<String, usize>,
    pub per_modality: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn from_snapshot(snapshot: &IndexSnapshot) -> Self {
        let mut per_modality = BTreeMap::new();
        for record in snapshot.records() {
            *per_modality.entry(record.modality.to_string()).or_insert(0) += 1;
        }
        Self {
            count: snapshot.count(),
            dim: snapshot.dim(),
            per_class: snapshot.class_counts().into_iter().collect(),
            per_modality,
        }
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "count\t{}", self.count)?;
        writeln!(f, "dim\t{}", self.dim)?;
        writeln!(f, "classes\t{}", self.per_class.len())?;
        for (modality, n) in &self.per_modality {
            writeln!(f, "modality\t{modality}\t{n}")?;
        }
        for (class, n) in &self.per_class {
            writeln!(f, "class\t{class}\t{n}")?;
        }
        Ok(())
    }
}

/// Normalizes externally extracted vectors and writes them as a gallery.
///
/// Every manifest id needs exactly one raw vector and every raw vector needs
/// a manifest id. The dimension is taken from the first raw vector.
pub fn ingest_records<I>(entries: &[IngestEntry], raw: I, out_dir: &Path) -> Result<IngestReport>
where
    I: IntoIterator<Item = RawVector>,
{
    let mut by_id: HashMap<String, Vec<f32>> = HashMap::new();
    let mut dim = None;
    for RawVector { id, vector } in raw {
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(Error::DimensionMismatch { expected, actual: vector.len() });
        }
        if by_id.contains_key(&id) {
            return Err(Error::DuplicateVector(id));
        }
        by_id.insert(id, vector);
    }

    let mut seen = HashSet::with_capacity(entries.len());
    let mut records = Vec::with_capacity(entries.len());
    let mut vectors = Vec::with_capacity(entries.len());
    for (row, entry) in entries.iter().enumerate() {
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::DuplicateId(entry.id.clone()));
        }
        let raw = by_id.remove(&entry.id).ok_or_else(|| Error::MissingVector(entry.id.clone()))?;
        let v = Embedding::normalize(&raw, raw.len()).map_err(|e| e.with_id(&entry.id))?;
        vectors.push(v);
        records.push(GalleryRecord {
            id: entry.id.clone(),
            row,
            class_label: entry.class_label.clone(),
            modality: entry.modality,
            uri: entry.uri.clone(),
            caption: entry.caption.clone(),
        });
    }
    if let Some(orphan) = by_id.into_keys().min() {
        return Err(Error::OrphanVector(orphan));
    }
    let dim = match dim {
        Some(d) => d,
        None => return Err(Error::InvariantViolation("no raw vectors supplied".into())),
    };

    write_gallery(&records, &vectors, dim, out_dir)?;
    let mut per_class = BTreeMap::new();
    let mut per_modality = BTreeMap::new();
    for record in &records {
        *per_class.entry(record.class_label.clone()).or_insert(0) += 1;
        *per_modality.entry(record.modality.to_string()).or_insert(0) += 1;
    }
    Ok(IngestReport { count: records.len(), dim, per_class, per_modality })
}

/// [`ingest_records`] reading the manifest and raw vectors from JSONL files.
pub fn ingest_raw(manifest_path: &Path, raw_path: &Path, out_dir: &Path) -> Result<IngestReport> {
    let entries: Vec<IngestEntry> = read_jsonl(manifest_path)?;
    let raw: Vec<RawVector> = read_jsonl(raw_path)?;
    ingest_records(&entries, raw, out_dir)
}
