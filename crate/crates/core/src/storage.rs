//! On-disk formats: embedding matrices, label manifests and condition
//! subspaces. Integers are little-endian `u32`, there is no padding, and
//! every file starts with an 8-byte ASCII magic followed by a version.
//!
//! Embedding file:
//!
//! ```text
//! "CLAYEMB1" | version | count | dim | count*dim f32, row-major
//! ```
//!
//! Subspace file:
//!
//! ```text
//! "CLAYSUB1" | version | kind | dim | k | spectrum_len | name_count
//! name_count x (u32 byte length | utf-8 bytes)
//! mu_c: dim f64 | basis: dim*k f64, column-major | spectrum_len f64
//! ```
//!
//! `kind` is 0 for tangent-space subspaces and 1 for Euclidean ones.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::geometry::UnitVector;
use crate::index::Labels;
use crate::subspace::{ConditionSubspace, SubspaceKind};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"CLAYEMB1";
pub const SUBSPACE_MAGIC: &[u8; 8] = b"CLAYSUB1";
pub const FORMAT_VERSION: u32 = 1;
/// Rows further than this from unit norm are rejected on load.
pub const ROW_NORM_TOLERANCE: f64 = 1e-3;
/// Maximum `|V^T V - I|` entry accepted when loading a subspace.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-5;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    w.write_all(bytes).map_err(io)?;
    w.flush().map_err(io)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes an embedding matrix in the embedding file layout.
pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let count = u32::try_from(m.len()).map_err(|_| Error::InvalidArgument("too many rows".into()))?;
    let dim = u32::try_from(m.dim()).map_err(|_| Error::InvalidArgument("dimension too large".into()))?;
    let mut out = Vec::with_capacity(20 + m.as_flat().len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    for v in [FORMAT_VERSION, count, dim] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for x in m.as_flat() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    write_file(path, &encode_embeddings(m)?)
}

/// Parses an embedding file. Rows within [`ROW_NORM_TOLERANCE`] of unit norm
/// are renormalized; anything further off is rejected.
pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut r = Reader::new(path, bytes);
    r.magic(EMBEDDING_MAGIC)?;
    r.version()?;
    let count = r.u32("count")? as u64;
    let dim = r.u32("dim")? as u64;
    let overflow = || Error::DimensionOverflow {
        path: path.to_path_buf(),
        detail: format!("{count} x {dim} rows of f32"),
    };
    let payload = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(overflow)?;
    if dim < 2 {
        return Err(r.malformed(format!("dimension {dim} is below 2")));
    }
    let raw = r.take(payload, "payload")?;
    r.finish()?;

    let dim = dim as usize;
    let mut data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    for (i, row) in data.chunks_exact_mut(dim).enumerate() {
        let n = row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= ROW_NORM_TOLERANCE) {
            return Err(r.malformed(format!("row {i} has norm {n}, expected 1 within {ROW_NORM_TOLERANCE}")));
        }
        for x in row.iter_mut() {
            *x = (f64::from(*x) / n) as f32;
        }
    }
    Ok(EmbeddingMatrix::from_normalized_unchecked(dim, data))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(path, &read_file(path)?)
}

/// Encodes a subspace in the subspace file layout.
pub fn encode_subspace(s: &ConditionSubspace) -> Result<Vec<u8>> {
    let as_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} does not fit in u32")))
    };
    let kind = match s.kind() {
        SubspaceKind::Tangent => 0u32,
        SubspaceKind::Euclidean => 1,
    };
    let mut out = Vec::new();
    out.extend_from_slice(SUBSPACE_MAGIC);
    for v in [
        FORMAT_VERSION,
        kind,
        as_u32(s.dim(), "dim")?,
        as_u32(s.k(), "k")?,
        as_u32(s.singular_values().len(), "spectrum length")?,
        as_u32(s.condition_names().len(), "name count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for name in s.condition_names() {
        out.extend_from_slice(&as_u32(name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for x in s.mu_c().coords().iter().chain(s.basis()).chain(s.singular_values()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn write_subspace(path: &Path, s: &ConditionSubspace) -> Result<()> {
    write_file(path, &encode_subspace(s)?)
}

/// Parses a subspace file and re-verifies the basis.
pub fn decode_subspace(path: &Path, bytes: &[u8]) -> Result<ConditionSubspace> {
    let mut r = Reader::new(path, bytes);
    r.magic(SUBSPACE_MAGIC)?;
    r.version()?;
    let kind = match r.u32("kind")? {
        0 => SubspaceKind::Tangent,
        1 => SubspaceKind::Euclidean,
        other => return Err(r.malformed(format!("unknown subspace kind {other}"))),
    };
    let dim = r.u32("dim")? as usize;
    let k = r.u32("k")? as usize;
    let spectrum_len = r.u32("spectrum length")? as usize;
    let name_count = r.u32("name count")? as usize;
    if dim < 2 || k == 0 || k > dim || spectrum_len < k {
        return Err(r.malformed(format!(
            "inconsistent header: dim {dim}, k {k}, spectrum length {spectrum_len}"
        )));
    }
    let mut names = Vec::new();
    for i in 0..name_count {
        let len = r.u32("name length")? as usize;
        let raw = r.take(len, "condition name")?;
        let name = std::str::from_utf8(raw).map_err(|_| r.malformed(format!("condition name {i} is not utf-8")))?;
        names.push(name.to_string());
    }
    let floats = dim
        .checked_mul(k)
        .and_then(|n| n.checked_add(dim))
        .and_then(|n| n.checked_add(spectrum_len))
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.to_path_buf(),
            detail: format!("dim {dim}, k {k}, spectrum length {spectrum_len}"),
        })?;
    let mut values = r.f64s(floats)?;
    r.finish()?;

    let singular_values = values.split_off(dim + dim * k);
    let basis = values.split_off(dim);
    let mu_c = UnitVector::new(values).map_err(|e| r.malformed(format!("mu_c: {e}")))?;
    let s = ConditionSubspace::from_parts(kind, mu_c, basis, k, singular_values, names)
        .map_err(|e| r.malformed(e.to_string()))?;
    let deviation = s.orthonormality_error();
    if !(deviation <= ORTHONORMALITY_TOLERANCE) {
        return Err(Error::OrthonormalityViolation {
            path: path.to_path_buf(),
            deviation,
        });
    }
    Ok(s)
}

pub fn read_subspace(path: &Path) -> Result<ConditionSubspace> {
    decode_subspace(path, &read_file(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub values: Vec<String>,
}

/// Item ids and labels, in the same order as the embedding file rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub items: Vec<ManifestItem>,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub source: String,
}

impl Manifest {
    /// Builds a manifest from column-wise labels; declared values are listed
    /// in order of first appearance.
    pub fn from_labels(ids: &[String], labels: &Labels, source: impl Into<String>) -> Result<Self> {
        let mut attributes = Vec::new();
        for (name, column) in labels {
            if column.len() != ids.len() {
                return Err(Error::LabelCoverage {
                    attribute: name.clone(),
                    expected: ids.len(),
                    actual: column.len(),
                });
            }
            let mut values: Vec<String> = Vec::new();
            for v in column {
                if !values.contains(v) {
                    values.push(v.clone());
                }
            }
            attributes.push(AttributeSpec {
                name: name.clone(),
                values,
            });
        }
        let items = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ManifestItem {
                id: id.clone(),
                labels: labels.iter().map(|(k, v)| (k.clone(), v[i].clone())).collect(),
            })
            .collect();
        let m = Self {
            items,
            attributes,
            source: source.into(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Ids are unique and every item carries a declared value for every
    /// declared attribute.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        for attr in &self.attributes {
            let mut labeled = 0;
            for item in &self.items {
                match item.labels.get(&attr.name) {
                    Some(v) if attr.values.contains(v) => labeled += 1,
                    Some(v) => {
                        return Err(Error::InvalidArgument(format!(
                            "item `{}` has undeclared {} value `{v}`",
                            item.id, attr.name
                        )))
                    }
                    None => {}
                }
            }
            if labeled != self.items.len() {
                return Err(Error::LabelCoverage {
                    attribute: attr.name.clone(),
                    expected: self.items.len(),
                    actual: labeled,
                });
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    /// Column-wise labels for the declared attributes.
    pub fn labels(&self) -> Labels {
        self.attributes
            .iter()
            .map(|a| {
                let column = self.items.iter().map(|i| i.labels[&a.name].clone()).collect();
                (a.name.clone(), column)
            })
            .collect()
    }
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<()> {
    m.validate()?;
    let mut text = serde_json::to_string_pretty(m).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = read_file(path)?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    m.validate()?;
    Ok(m)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn malformed(&self, detail: String) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            detail,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::TruncatedFile {
                path: self.path.to_path_buf(),
                detail: format!("{what} needs {n} bytes at offset {}, {available} left", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        if self.bytes.len() < 8 || &self.bytes[..8] != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
            });
        }
        self.pos = 8;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn version(&mut self) -> Result<()> {
        match self.u32("version")? {
            FORMAT_VERSION => Ok(()),
            version => Err(Error::UnsupportedVersion {
                path: self.path.to_path_buf(),
                version,
            }),
        }
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::DimensionOverflow {
            path: self.path.to_path_buf(),
            detail: format!("{n} f64 values"),
        })?;
        Ok(self
            .take(len, "f64 payload")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        let extra = self.bytes.len() - self.pos;
        if extra != 0 {
            return Err(self.malformed(format!("{extra} trailing bytes")));
        }
        Ok(())
    }
}
