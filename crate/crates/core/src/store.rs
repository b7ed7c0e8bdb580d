//! Persistence and in-memory management of per-sequence embedding matrices.
//!
//! Each sequence's embedding lives in its own EMB1 file. A JSON manifest
//! groups the files produced by one model into an [`EmbeddingSet`].
//!
//! EMB1 layout, little-endian:
//!
//! ```text
//! "EMB1" | u32 version=1 | u16 id_len | id bytes | u32 n | u32 k | u8 dtype=1 | n*k f32 row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMB_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

/// Per-residue embedding of one sequence under one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    seq_id: String,
    n: usize,
    k: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major values.
    pub fn new(seq_id: impl Into<String>, n: usize, k: usize, values: Vec<f32>) -> Result<Self> {
        let seq_id = seq_id.into();
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "{seq_id}: embedding must have n >= 1 and k >= 1 (got {n}x{k})"
            )));
        }
        if values.len() != n * k {
            return Err(Error::DimMismatch(format!(
                "{seq_id}: expected {} values for {n}x{k}, got {}",
                n * k,
                values.len()
            )));
        }
        if seq_id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument("seq_id longer than 65535 bytes".into()));
        }
        check_finite(&values, k)?;
        Ok(Self {
            seq_id,
            n,
            k,
            values,
        })
    }

    /// Narrows a double-precision matrix to on-disk precision.
    pub fn from_f64(seq_id: impl Into<String>, m: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = m.shape();
        let mut values = Vec::with_capacity(n * k);
        for i in 0..n {
            for j in 0..k {
                values.push(m[(i, j)] as f32);
            }
        }
        Self::new(seq_id, n, k, values)
    }

    pub fn seq_id(&self) -> &str {
        &self.seq_id
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Widens to `f64` for numerics. Every `f32` is exactly representable.
    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.n, self.k, self.values.iter().map(|&v| v as f64))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_embedding(self, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_embedding(path)
    }

    /// Encodes the matrix as EMB1 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.seq_id.as_bytes();
        let mut buf = Vec::with_capacity(4 + 4 + 2 + id.len() + 9 + 4 * self.values.len());
        buf.extend_from_slice(&EMB_MAGIC);
        buf.extend_from_slice(&EMB_VERSION.to_le_bytes());
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id);
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.k as u32).to_le_bytes());
        buf.push(DTYPE_F32);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Decodes EMB1 bytes. `context` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, context);
        let magic = r.array::<4>("magic")?;
        if magic != EMB_MAGIC {
            return Err(Error::BadMagic {
                context: context.into(),
                found: magic,
            });
        }
        let version = r.u32("version")?;
        if version != EMB_VERSION {
            return Err(Error::Version {
                context: context.into(),
                expected: EMB_VERSION,
                found: version,
            });
        }
        let id_len = r.u16("seq_id length")? as usize;
        let id = r.take(id_len, "seq_id")?;
        let seq_id = String::from_utf8(id.to_vec())
            .map_err(|_| Error::Parse(format!("{context}: seq_id is not valid UTF-8")))?;
        let n = r.u32("n")? as usize;
        let k = r.u32("k")? as usize;
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Dtype {
                context: context.into(),
                code: dtype,
            });
        }
        let count = n.checked_mul(k).ok_or_else(|| Error::Truncated {
            context: context.into(),
            detail: format!("n*k overflows ({n}x{k})"),
        })?;
        let expected = count.saturating_mul(4);
        if r.remaining() < expected {
            return Err(Error::Truncated {
                context: context.into(),
                detail: format!(
                    "header declares {n}x{k} ({expected} bytes), payload has {}",
                    r.remaining()
                ),
            });
        }
        if r.remaining() > expected {
            return Err(Error::Corrupted {
                context: context.into(),
                detail: format!("{} trailing bytes", r.remaining() - expected),
            });
        }
        let payload = r.take(expected, "payload")?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(seq_id, n, k, values)
    }
}

fn check_finite(values: &[f32], k: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(Error::NonFinite {
            row: idx / k,
            col: idx % k,
        }),
        None => Ok(()),
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], context: &'a str) -> Self {
        Self {
            bytes,
            pos: 0,
            context,
        }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::Truncated {
                context: self.context.into(),
                detail: format!("missing {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}

pub fn write_embedding(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_finite(&m.values, m.k)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&m.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes, &path.display().to_string())
}

/// An ordered hierarchy of models with strictly increasing widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHierarchy {
    levels: Vec<(String, usize)>,
}

impl ModelHierarchy {
    pub fn new(levels: Vec<(String, usize)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("hierarchy has no levels".into()));
        }
        for w in levels.windows(2) {
            if w[1].1 <= w[0].1 {
                return Err(Error::NonIncreasingDims(format!(
                    "{} ({}) -> {} ({})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        for (i, (tag, _)) in levels.iter().enumerate() {
            if levels[..i].iter().any(|(t, _)| t == tag) {
                return Err(Error::InvalidArgument(format!("duplicate model tag {tag:?}")));
            }
        }
        Ok(Self { levels })
    }

    /// ESM-2 widths, 8M through 15B, in strictly increasing order.
    pub fn esm2() -> Self {
        let levels = [
            ("esm2_t6_8M", 320),
            ("esm2_t12_35M", 480),
            ("esm2_t30_150M", 640),
            ("esm2_t33_650M", 1280),
            ("esm2_t36_3B", 2560),
            ("esm2_t48_15B", 5120),
        ];
        Self {
            levels: levels.iter().map(|(t, k)| (t.to_string(), *k)).collect(),
        }
    }

    pub fn levels(&self) -> &[(String, usize)] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn tags(&self) -> Vec<&str> {
        self.levels.iter().map(|(t, _)| t.as_str()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(|(_, k)| *k).collect()
    }

    pub fn truncate(&self, levels: usize) -> Self {
        Self {
            levels: self.levels[..levels].to_vec(),
        }
    }
}

/// Embeddings of a dataset under one model, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    model_tag: String,
    k: usize,
    entries: IndexMap<String, EmbeddingMatrix>,
}

impl EmbeddingSet {
    pub fn new(model_tag: impl Into<String>, k: usize) -> Self {
        Self {
            model_tag: model_tag.into(),
            k,
            entries: IndexMap::new(),
        }
    }

    pub fn from_matrices(
        model_tag: impl Into<String>,
        k: usize,
        matrices: impl IntoIterator<Item = EmbeddingMatrix>,
    ) -> Result<Self> {
        let mut set = Self::new(model_tag, k);
        for m in matrices {
            set.insert(m)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, m: EmbeddingMatrix) -> Result<()> {
        if m.k != self.k {
            return Err(Error::DimMismatch(format!(
                "{}: k={} but set {:?} has dim {}",
                m.seq_id, m.k, self.model_tag, self.k
            )));
        }
        if self.entries.contains_key(&m.seq_id) {
            return Err(Error::Duplicate(m.seq_id));
        }
        self.entries.insert(m.seq_id.clone(), m);
        Ok(())
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, seq_id: &str) -> Option<&EmbeddingMatrix> {
        self.entries.get(seq_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingMatrix> {
        self.entries.values()
    }

    pub fn seq_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total residue count across all sequences.
    pub fn total_len(&self) -> usize {
        self.entries.values().map(|m| m.n).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seq_id: String,
    pub path: String,
    pub length: usize,
}

/// JSON manifest describing one [`EmbeddingSet`] on disk. Relative entry
/// paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_tag: String,
    pub dim: usize,
    pub entries: Vec<ManifestEntry>,
    /// Prefix widths for Matryoshka outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_hash: Option<String>,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_set(manifest_path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut set = EmbeddingSet::new(manifest.model_tag.clone(), manifest.dim);
    for entry in &manifest.entries {
        if set.get(&entry.seq_id).is_some() {
            return Err(Error::Duplicate(entry.seq_id.clone()));
        }
        let path = resolve(base, &entry.path);
        let m = read_embedding(&path)?;
        if m.seq_id != entry.seq_id {
            return Err(Error::Metadata(format!(
                "{}: file holds seq_id {:?}, manifest says {:?}",
                path.display(),
                m.seq_id,
                entry.seq_id
            )));
        }
        if m.n != entry.length {
            return Err(Error::LengthMismatch(format!(
                "{}: manifest length {} but file has n={}",
                entry.seq_id, entry.length, m.n
            )));
        }
        set.insert(m)?;
    }
    Ok(set)
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes every matrix as `<dir>/<seq_id>.emb` plus a manifest at
/// `manifest_path`. Returns the manifest that was written.
pub fn save_set(
    set: &EmbeddingSet,
    dir: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest_path = manifest_path.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::with_capacity(set.len());
    for m in set.iter() {
        let file = dir.join(format!("{}.emb", file_stem(&m.seq_id)));
        write_embedding(m, &file)?;
        let rel = file
            .strip_prefix(manifest_dir)
            .map(Path::to_path_buf)
            .unwrap_or(file.clone());
        entries.push(ManifestEntry {
            seq_id: m.seq_id.clone(),
            path: rel.to_string_lossy().into_owned(),
            length: m.n,
        });
    }
    let manifest = Manifest {
        model_tag: set.model_tag.clone(),
        dim: set.k,
        entries,
        level_dims: None,
        level_tags: None,
        chain_hash: None,
    };
    manifest.write(manifest_path)?;
    Ok(manifest)
}

fn file_stem(seq_id: &str) -> String {
    seq_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Rows of a set stacked into one `L x k` matrix, with per-sequence offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedMatrix {
    pub values: DMatrix<f64>,
    /// `(seq_id, row_start, row_count)` in stacking order.
    pub offsets: Vec<(String, usize, usize)>,
}

impl StackedMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    /// Splits back into per-sequence matrices under the given tag.
    pub fn unstack(&self, model_tag: &str) -> Result<EmbeddingSet> {
        let k = self.values.ncols();
        let mut set = EmbeddingSet::new(model_tag, k);
        for (id, start, count) in &self.offsets {
            let block = self.values.rows(*start, *count).into_owned();
            set.insert(EmbeddingMatrix::from_f64(id.clone(), &block)?)?;
        }
        Ok(set)
    }
}

pub fn stack(set: &EmbeddingSet) -> Result<StackedMatrix> {
    if set.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot stack empty set {:?}",
            set.model_tag
        )));
    }
    let total = set.total_len();
    let k = set.k;
    let mut values = DMatrix::<f64>::zeros(total, k);
    let mut offsets = Vec::with_capacity(set.len());
    let mut row = 0;
    for m in set.iter() {
        for i in 0..m.n {
            for (j, v) in m.row(i).iter().enumerate() {
                values[(row + i, j)] = *v as f64;
            }
        }
        offsets.push((m.seq_id.clone(), row, m.n));
        row += m.n;
    }
    Ok(StackedMatrix { values, offsets })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub aligned: bool,
    /// Ids present in both sets with equal lengths.
    pub matched: Vec<String>,
    /// `(seq_id, n_a, n_b)` for ids present in both with different lengths.
    pub length_mismatches: Vec<(String, usize, usize)>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub order_differs: bool,
}

impl AlignmentReport {
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if !self.length_mismatches.is_empty() {
            let ids: Vec<_> = self
                .length_mismatches
                .iter()
                .map(|(id, a, b)| format!("{id} ({a} vs {b})"))
                .collect();
            parts.push(format!("length mismatch: {}", ids.join(", ")));
        }
        if !self.only_in_a.is_empty() {
            parts.push(format!("only in first: {}", self.only_in_a.join(", ")));
        }
        if !self.only_in_b.is_empty() {
            parts.push(format!("only in second: {}", self.only_in_b.join(", ")));
        }
        if self.order_differs {
            parts.push("sequence order differs".into());
        }
        parts.join("; ")
    }
}

pub fn validate_aligned(a: &EmbeddingSet, b: &EmbeddingSet) -> AlignmentReport {
    let mut matched = Vec::new();
    let mut length_mismatches = Vec::new();
    let mut only_in_a = Vec::new();
    for m in a.iter() {
        match b.get(&m.seq_id) {
            Some(other) if other.n == m.n => matched.push(m.seq_id.clone()),
            Some(other) => length_mismatches.push((m.seq_id.clone(), m.n, other.n)),
            None => only_in_a.push(m.seq_id.clone()),
        }
    }
    let only_in_b: Vec<String> = b
        .seq_ids()
        .filter(|id| a.get(id).is_none())
        .map(str::to_owned)
        .collect();
    let order_differs = !a.seq_ids().eq(b.seq_ids());
    let aligned = length_mismatches.is_empty()
        && only_in_a.is_empty()
        && only_in_b.is_empty()
        && !order_differs;
    AlignmentReport {
        aligned,
        matched,
        length_mismatches,
        only_in_a,
        only_in_b,
        order_differs,
    }
}
