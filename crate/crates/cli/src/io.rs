//! Embedding files: a little-endian binary matrix plus a CSV metadata
//! sidecar.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `REID`              |
//! | 4      | 2    | version (u16, = 1)        |
//! | 6      | 4    | count (u32)               |
//! | 10     | 4    | dim (u32)                 |
//! | 14     | 1    | float width (4 or 8)      |
//! | 15     | ...  | `count·dim` floats        |
//!
//! The sidecar lives next to the binary file with a `.csv` extension and has
//! the header `item_id,person_id,camera_id`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use reid_core::retrieval::SpatialFeatureSet;
use reid_core::{Embedding, ItemMeta};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"REID";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloatWidth {
    F32,
    #[default]
    F64,
}

impl FloatWidth {
    pub fn bytes(self) -> usize {
        match self {
            FloatWidth::F32 => 4,
            FloatWidth::F64 => 8,
        }
    }

    pub fn from_bytes(b: u8) -> Option<Self> {
        match b {
            4 => Some(FloatWidth::F32),
            8 => Some(FloatWidth::F64),
            _ => None,
        }
    }
}

/// Serializes a row-major `count × dim` matrix.
pub fn encode(rows: &Array2<f64>, width: FloatWidth) -> Vec<u8> {
    let (count, dim) = rows.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + count * dim * width.bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.push(width.bytes() as u8);
    for &v in rows.iter() {
        match width {
            FloatWidth::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            FloatWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Parses a binary matrix, widening 32-bit values to `f64`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Array2<f64>, FloatWidth)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CliError::BadMagic(path.into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(CliError::Truncated {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CliError::BadVersion {
            path: path.into(),
            found: version,
        });
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let width = FloatWidth::from_bytes(bytes[14]).ok_or(CliError::BadWidth {
        path: path.into(),
        found: bytes[14],
    })?;
    let expected = HEADER_LEN + count * dim * width.bytes();
    if bytes.len() < expected {
        return Err(CliError::Truncated {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CliError::TrailingBytes {
            path: path.into(),
            extra: bytes.len() - expected,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let values: Vec<f64> = match width {
        FloatWidth::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        FloatWidth::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let rows = Array2::from_shape_vec((count, dim), values).expect("payload length checked");
    Ok((rows, width))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Writes `bytes` through a temporary file in the same directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_metadata(path: &Path) -> Result<Vec<ItemMeta>> {
    let meta_err = |message: String| CliError::Metadata {
        path: path.into(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => meta_err(format!("{other:?}")),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| meta_err(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["item_id", "person_id", "camera_id"] {
        return Err(meta_err(format!("unexpected header {headers:?}")));
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| meta_err(e.to_string())))
        .collect()
}

pub fn metadata_csv(meta: &[ItemMeta]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["item_id", "person_id", "camera_id"])
        .map_err(|e| CliError::Config(format!("metadata serialization: {e}")))?;
    for m in meta {
        w.serialize(m)
            .map_err(|e| CliError::Config(format!("metadata serialization: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Config(format!("metadata serialization: {e}")))
}

/// Writes the binary file and its sidecar.
pub fn save_embeddings(
    path: &Path,
    embeddings: &[Embedding],
    meta: &[ItemMeta],
    width: FloatWidth,
) -> Result<()> {
    if embeddings.len() != meta.len() {
        return Err(CliError::CountMismatch {
            path: path.into(),
            expected: embeddings.len(),
            found: meta.len(),
        });
    }
    let dim = embeddings.first().map_or(0, Embedding::len);
    let mut rows = Array2::zeros((embeddings.len(), dim));
    for (mut row, e) in rows.rows_mut().into_iter().zip(embeddings) {
        if e.len() != dim {
            return Err(reid_core::Error::ShapeMismatch {
                context: "save_embeddings",
                expected: dim.to_string(),
                actual: e.len().to_string(),
            }
            .into());
        }
        row.assign(&ndarray::aview1(e.as_slice()));
    }
    write_atomic(path, &encode(&rows, width))?;
    write_atomic(&sidecar_path(path), &metadata_csv(meta)?)
}

/// Reads an embedding file and its aligned metadata.
pub fn load_embeddings(path: &Path) -> Result<(Vec<Embedding>, Vec<ItemMeta>)> {
    let (rows, _) = decode(&read_bytes(path)?, path)?;
    let sidecar = sidecar_path(path);
    let meta = read_metadata(&sidecar)?;
    if meta.len() != rows.nrows() {
        return Err(CliError::CountMismatch {
            path: sidecar,
            expected: rows.nrows(),
            found: meta.len(),
        });
    }
    reid_core::validate_meta_set(&meta)?;
    let embeddings = rows
        .rows()
        .into_iter()
        .map(|r| Embedding::new(r.to_vec()))
        .collect::<reid_core::Result<Vec<_>>>()?;
    Ok((embeddings, meta))
}

/// Per-item spatial features: `count` locations of `dim` values each,
/// returned as a `dim × count` set.
pub fn load_spatial(path: &Path) -> Result<SpatialFeatureSet> {
    let (rows, _) = decode(&read_bytes(path)?, path)?;
    Ok(SpatialFeatureSet::new(rows.t().to_owned())?)
}

pub fn spatial_path(dir: &Path, item_id: &str) -> PathBuf {
    dir.join(format!("{item_id}.reid"))
}

/// SHA-256 over the little-endian bytes of `values`, hex encoded.
pub fn checksum<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
