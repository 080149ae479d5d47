//! Embedding matrices, object annotations and the assembled audit dataset.
//!
//! Embeddings live on disk as a JSON header (`magic`, `n`, `d`, `ids`) next
//! to a raw payload of `n * d` little-endian `f32` values, row-major. The
//! payload path is the header path with its extension replaced by `f32`.
//! Annotations are JSON lines of `{"id": .., "objects": [..]}`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{is_unit, norm_f64};

pub const EMBEDDING_MAGIC: &str = "DVEMB1";

/// Rows flagged as normalized must have a norm within this distance of 1.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// Dense row-major `f32` matrix whose rows are keyed by record ID.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
    normalized: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    magic: String,
    n: usize,
    d: usize,
    ids: Vec<String>,
}

/// Payload file that belongs to an embedding header.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("f32")
}

impl EmbeddingMatrix {
    /// Builds a validated, un-normalized matrix.
    pub fn new(ids: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::Validation(format!(
                "{} ids with dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        let mut dups: Vec<String> = ids.iter().filter(|id| !seen.insert(id.as_str())).cloned().collect();
        if !dups.is_empty() {
            dups.sort();
            dups.dedup();
            return Err(Error::Validation(format!("duplicate ids: {}", dups.join(", "))));
        }
        let m = EmbeddingMatrix {
            ids,
            data,
            dim,
            normalized: false,
        };
        let bad: Vec<String> = m
            .rows()
            .filter(|(_, row)| row.iter().any(|v| !v.is_finite()))
            .map(|(id, _)| id.to_string())
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(format!(
                "non-finite values in rows: {}",
                bad.join(", ")
            )));
        }
        Ok(m)
    }

    pub fn from_rows<S: Into<String>>(ids: Vec<S>, rows: &[Vec<f32>], dim: usize) -> Result<Self> {
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Validation(format!(
                "row {bad} has length {}, expected {dim}",
                rows[bad].len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(ids.into_iter().map(Into::into).collect(), data, dim)
    }

    /// Wraps rows that the caller asserts are unit-norm, checking the claim.
    pub fn from_unit_rows(ids: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        let mut m = Self::new(ids, data, dim)?;
        let bad: Vec<String> = m
            .rows()
            .filter(|(_, r)| !is_unit(r, UNIT_NORM_TOL))
            .map(|(id, _)| id.to_string())
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(format!("rows are not unit norm: {}", bad.join(", "))));
        }
        m.normalized = true;
        Ok(m)
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

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        // chunks_exact(0) panics, so zero-dimensional matrices yield empty rows.
        let dim = self.dim;
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), &self.data[i * dim..(i + 1) * dim]))
    }

    /// Copy of the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            data,
            dim: self.dim,
            normalized: self.normalized,
        }
    }

    /// Multiplies every coordinate by `factor`; the result is un-normalized.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.ids.clone(),
            self.data.iter().map(|v| v * factor).collect(),
            self.dim,
        )
    }

    pub fn normalize(&self) -> Result<Self> {
        normalize(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_embeddings(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_embeddings(self, path)
    }
}

/// Reads a header/payload pair. The result is never flagged normalized.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: EmbeddingHeader = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if header.magic != EMBEDDING_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected {EMBEDDING_MAGIC:?}", header.magic),
        ));
    }
    if header.ids.len() != header.n {
        return Err(Error::format(
            path,
            format!("header n = {} but {} ids", header.n, header.ids.len()),
        ));
    }
    let payload = payload_path(path);
    let bytes = fs::read(&payload).map_err(|e| Error::io(&payload, e))?;
    let expected = header
        .n
        .checked_mul(header.d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::format(path, "n * d overflows"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            &payload,
            format!(
                "payload has {} bytes, header {{n: {}, d: {}}} needs {expected}",
                bytes.len(),
                header.n,
                header.d
            ),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(header.ids, data, header.d)
}

/// Writes `m` as a header at `path` plus its payload file.
pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = EmbeddingHeader {
        magic: EMBEDDING_MAGIC.to_string(),
        n: m.len(),
        d: m.dim,
        ids: m.ids.clone(),
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(m.data.len() * 4);
    for v in &m.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let payload = payload_path(path);
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))
}

/// Divides each row by its Euclidean norm (computed in `f64`).
pub fn normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(m.data.len());
    let mut zero = Vec::new();
    for (id, row) in m.rows() {
        let norm = norm_f64(row);
        if norm == 0.0 {
            zero.push(id.to_string());
            continue;
        }
        data.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    if !zero.is_empty() {
        return Err(Error::Validation(format!(
            "zero-norm rows cannot be normalized: {}",
            zero.join(", ")
        )));
    }
    Ok(EmbeddingMatrix {
        ids: m.ids.clone(),
        data,
        dim: m.dim,
        normalized: true,
    })
}

/// Set of object labels detected in one image.
pub type ObjectLabelSet = BTreeSet<String>;

/// Ground-truth objects per record ID. Labels are stored case-folded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationTable {
    entries: BTreeMap<String, ObjectLabelSet>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationLine {
    id: String,
    objects: Vec<String>,
}

/// Labels compare as exact case-folded strings.
pub fn fold_label(label: &str) -> String {
    label.to_lowercase()
}

impl AnnotationTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record; labels are case-folded and collapsed to a set.
    pub fn insert<I, S>(&mut self, id: impl Into<String>, objects: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let id = id.into();
        if self.entries.contains_key(&id) {
            return Err(Error::Validation(format!("duplicate annotation id {id}")));
        }
        let mut set = ObjectLabelSet::new();
        for label in objects {
            let label = label.as_ref();
            if label.trim().is_empty() {
                return Err(Error::Validation(format!("empty object label for id {id}")));
            }
            set.insert(fold_label(label));
        }
        self.entries.insert(id, set);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ObjectLabelSet> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ObjectLabelSet)> {
        self.entries.iter()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_annotations(path)
    }

    /// Writes one JSON line per record in ascending ID order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for (id, objects) in &self.entries {
            let line = AnnotationLine {
                id: id.clone(),
                objects: objects.iter().cloned().collect(),
            };
            serde_json::to_writer(&mut out, &line).expect("annotation serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = AnnotationTable::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AnnotationLine = serde_json::from_str(&line).map_err(|e| Error::FormatLine {
            path: path.to_path_buf(),
            line: lineno,
            msg: e.to_string(),
        })?;
        table.insert(parsed.id, parsed.objects).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{} line {lineno}: {msg}", path.display())),
            other => other,
        })?;
    }
    Ok(table)
}

/// ID-aligned inputs of one audit: a training split's captions under the
/// target and reference models, and the public images under both.
#[derive(Debug, Clone)]
pub struct AuditDataset {
    pub split_name: String,
    pub text_target: EmbeddingMatrix,
    pub text_reference: EmbeddingMatrix,
    pub ground_truth: AnnotationTable,
    pub public_target: EmbeddingMatrix,
    pub public_reference: EmbeddingMatrix,
    pub public_annotations: AnnotationTable,
}

impl AuditDataset {
    pub fn n_records(&self) -> usize {
        self.text_target.len()
    }

    pub fn n_public(&self) -> usize {
        self.public_target.len()
    }
}

/// Reorders `other` to follow `anchor`'s ID order, or reports every ID that
/// appears in only one of the two.
fn align_to(anchor: &EmbeddingMatrix, other: EmbeddingMatrix, what: &str) -> Result<EmbeddingMatrix> {
    if anchor.ids == other.ids {
        return Ok(other);
    }
    let pos: HashMap<&str, usize> = other.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let anchor_set: HashSet<&str> = anchor.ids.iter().map(String::as_str).collect();
    let mut offending: Vec<String> = anchor
        .ids
        .iter()
        .filter(|id| !pos.contains_key(id.as_str()))
        .chain(other.ids.iter().filter(|id| !anchor_set.contains(id.as_str())))
        .cloned()
        .collect();
    if !offending.is_empty() {
        offending.sort();
        return Err(Error::Alignment {
            msg: format!("{what}: target and reference views hold different ids"),
            ids: offending,
        });
    }
    let order: Vec<usize> = anchor.ids.iter().map(|id| pos[id.as_str()]).collect();
    Ok(other.select(&order))
}

fn missing_annotations(m: &EmbeddingMatrix, table: &AnnotationTable) -> Vec<String> {
    m.ids.iter().filter(|id| !table.contains(id)).cloned().collect()
}

/// Validates, aligns and normalizes the six inputs of an audit.
pub fn assemble(
    split_name: impl Into<String>,
    text_target: EmbeddingMatrix,
    text_reference: EmbeddingMatrix,
    ground_truth: AnnotationTable,
    public_target: EmbeddingMatrix,
    public_reference: EmbeddingMatrix,
    public_annotations: AnnotationTable,
) -> Result<AuditDataset> {
    let text_reference = align_to(&text_target, text_reference, "split captions")?;
    let public_reference = align_to(&public_target, public_reference, "public images")?;

    let mut missing = missing_annotations(&text_target, &ground_truth);
    missing.extend(missing_annotations(&public_target, &public_annotations));
    if !missing.is_empty() {
        return Err(Error::Alignment {
            msg: "records without annotations".into(),
            ids: missing,
        });
    }

    let public_ids: HashSet<&str> = public_target.ids.iter().map(String::as_str).collect();
    let overlap: Vec<String> = text_target
        .ids
        .iter()
        .filter(|id| public_ids.contains(id.as_str()))
        .cloned()
        .collect();
    if !overlap.is_empty() {
        return Err(Error::Validation(format!(
            "split and public set share ids: {}",
            overlap.join(", ")
        )));
    }

    for (name, text, public) in [
        ("target", &text_target, &public_target),
        ("reference", &text_reference, &public_reference),
    ] {
        if text.dim != public.dim && !text.is_empty() && !public.is_empty() {
            return Err(Error::Validation(format!(
                "{name} model: caption dimension {} differs from image dimension {}",
                text.dim, public.dim
            )));
        }
    }

    Ok(AuditDataset {
        split_name: split_name.into(),
        text_target: normalize(&text_target)?,
        text_reference: normalize(&text_reference)?,
        ground_truth,
        public_target: normalize(&public_target)?,
        public_reference: normalize(&public_reference)?,
        public_annotations,
    })
}
