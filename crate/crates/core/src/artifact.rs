//! MAT1 matrix blocks and the `meta.json` bookkeeping shared by every
//! persisted artifact kind.
//!
//! MAT1 layout, little-endian:
//!
//! ```text
//! "MAT1" | u32 version=1 | u32 rows | u32 cols | u8 dtype=2 | rows*cols f64 row-major
//! ```
//!
//! Blocks are stored at full double precision so that a loaded artifact
//! reproduces the in-memory one bit for bit. `meta.json` records each
//! block's shape and SHA-256 digest.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::store::ByteReader;

pub const MAT_MAGIC: [u8; 4] = *b"MAT1";
pub const MAT_VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 2;

/// Version of the artifact directory layout and of the config hash scheme.
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut buf = Vec::with_capacity(17 + 8 * rows * cols);
    buf.extend_from_slice(&MAT_MAGIC);
    buf.extend_from_slice(&MAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    buf.push(DTYPE_F64);
    for i in 0..rows {
        for j in 0..cols {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    buf
}

pub fn decode_matrix(bytes: &[u8], context: &str) -> Result<DMatrix<f64>> {
    let mut r = ByteReader::new(bytes, context);
    let magic = r.array::<4>("magic")?;
    if magic != MAT_MAGIC {
        return Err(Error::BadMagic {
            context: context.into(),
            found: magic,
        });
    }
    let version = r.u32("version")?;
    if version != MAT_VERSION {
        return Err(Error::Version {
            context: context.into(),
            expected: MAT_VERSION,
            found: version,
        });
    }
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F64 {
        return Err(Error::Dtype {
            context: context.into(),
            code: dtype,
        });
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .unwrap_or(usize::MAX);
    if r.remaining() != expected {
        return Err(Error::Truncated {
            context: context.into(),
            detail: format!(
                "header declares {rows}x{cols} ({expected} bytes), payload has {}",
                r.remaining()
            ),
        });
    }
    let payload = r.take(expected, "payload")?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    Ok(DMatrix::from_row_iterator(rows, cols, values))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRef {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_block(dir: &Path, name: &str, m: &DMatrix<f64>) -> Result<BlockRef> {
    let bytes = encode_matrix(m);
    let file = format!("{name}.mat");
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(BlockRef {
        file,
        rows: m.nrows(),
        cols: m.ncols(),
        sha256: sha256_hex(&bytes),
    })
}

/// Reads a block, verifying digest, header and the expected shape.
pub fn read_block(dir: &Path, block: &BlockRef, expect: (usize, usize)) -> Result<DMatrix<f64>> {
    let path = dir.join(&block.file);
    let context = path.display().to_string();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != block.sha256 {
        return Err(Error::Corrupted {
            context,
            detail: "checksum mismatch".into(),
        });
    }
    let m = decode_matrix(&bytes, &context).map_err(|e| match e {
        Error::Truncated { context, detail } => Error::Corrupted { context, detail },
        other => other,
    })?;
    if m.shape() != (block.rows, block.cols) {
        return Err(Error::DimMismatch(format!(
            "{context}: block is {}x{} but metadata says {}x{}",
            m.nrows(),
            m.ncols(),
            block.rows,
            block.cols
        )));
    }
    if m.shape() != expect {
        return Err(Error::DimMismatch(format!(
            "{context}: block is {}x{} but artifact dims require {}x{}",
            m.nrows(),
            m.ncols(),
            expect.0,
            expect.1
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupted {
            context,
            detail: "non-finite entry".into(),
        });
    }
    Ok(m)
}

pub fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

pub fn as_vector(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Feeds a matrix's shape and exact bit patterns into a digest.
pub fn hash_matrix(h: &mut Sha256, m: &DMatrix<f64>) {
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("metadata serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))
}

/// Only the kind and version, read before dispatching on the full schema.
#[derive(Debug, Deserialize)]
pub struct MetaHeader {
    pub kind: String,
    pub format_version: u32,
}

pub fn read_header(dir: &Path) -> Result<MetaHeader> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: MetaHeader = serde_json::from_str(&text)
        .map_err(|e| Error::Metadata(format!("{}: {e}", path.display())))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            context: path.display().to_string(),
            expected: FORMAT_VERSION,
            found: header.format_version,
        });
    }
    Ok(header)
}
