//! The `CSA1` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | offset        | size        | field                                   |
//! |---------------|-------------|-----------------------------------------|
//! | 0             | 4           | magic `b"CSA1"`                         |
//! | 4             | 4           | format version, `u32` (currently 1)     |
//! | 8             | 1           | dtype, `u8` (1 = f32, 2 = f64)          |
//! | 9             | 1           | ndim, `u8`                              |
//! | 10            | 8 · ndim    | dims, `u64` each                        |
//! | 10 + 8·ndim   | n · size    | payload, row-major                      |
//! | end − 4       | 4           | CRC-32 (IEEE) of the payload bytes      |
//!
//! Row labels and run metadata live in a JSON sidecar next to the tensor
//! (`<path>.json`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::RowLabel;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CSA1";
pub const FORMAT_VERSION: u32 = 1;
pub const SIDECAR_SCHEMA_VERSION: u32 = 1;
const HEADER_FIXED: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated file: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("payload CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid sidecar: {0}")]
    Sidecar(String),
}

impl FormatError {
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::BadMagic(_) => "bad_magic",
            FormatError::UnsupportedVersion(_) => "version_mismatch",
            FormatError::UnsupportedDtype(_) => "bad_dtype",
            FormatError::Truncated { .. } => "truncated",
            FormatError::TrailingBytes { .. } => "trailing_bytes",
            FormatError::CrcMismatch { .. } => "crc_mismatch",
            FormatError::Shape(_) => "bad_shape",
            FormatError::Sidecar(_) => "bad_sidecar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> std::result::Result<Self, FormatError> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(FormatError::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A dense row-major array held in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    /// Precision the data was stored with on disk.
    pub stored_as: Dtype,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> std::result::Result<Self, FormatError> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(FormatError::Shape(format!("dims {dims:?} need {n} elements, got {}", data.len())));
        }
        Ok(Tensor { dims, data, stored_as: Dtype::F64 })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = m.transpose().as_slice().to_vec();
        Tensor { dims: vec![m.nrows(), m.ncols()], data, stored_as: Dtype::F64 }
    }

    /// Views a 2-D tensor as a matrix; a 1-D tensor becomes a column.
    pub fn to_matrix(&self) -> std::result::Result<DMatrix<f64>, FormatError> {
        match self.dims.as_slice() {
            [rows, cols] => Ok(DMatrix::from_row_slice(*rows, *cols, &self.data)),
            [n] => Ok(DMatrix::from_column_slice(*n, 1, &self.data)),
            other => Err(FormatError::Shape(format!("expected a 1-D or 2-D tensor, got dims {other:?}"))),
        }
    }
}

fn element_count(dims: &[usize]) -> std::result::Result<usize, FormatError> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d).ok_or_else(|| FormatError::Shape(format!("dims {dims:?} overflow")))
    })
}

/// Serializes a tensor as float64.
pub fn encode_tensor(t: &Tensor) -> std::result::Result<Vec<u8>, FormatError> {
    let n = element_count(&t.dims)?;
    if n != t.data.len() {
        return Err(FormatError::Shape(format!("dims {:?} need {n} elements, got {}", t.dims, t.data.len())));
    }
    let ndim = u8::try_from(t.dims.len())
        .map_err(|_| FormatError::Shape(format!("{} dimensions exceed 255", t.dims.len())))?;
    let mut out = Vec::with_capacity(HEADER_FIXED + 8 * t.dims.len() + 8 * n + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(Dtype::F64.code());
    out.push(ndim);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    let start = out.len();
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn need(bytes: &[u8], expected: usize) -> std::result::Result<(), FormatError> {
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, actual: bytes.len() });
    }
    Ok(())
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<Tensor, FormatError> {
    need(bytes, 4)?;
    let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    need(bytes, HEADER_FIXED)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("length checked"));
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(bytes[8])?;
    let ndim = bytes[9] as usize;
    let header = HEADER_FIXED + 8 * ndim;
    need(bytes, header)?;
    let dims = (0..ndim)
        .map(|i| {
            let at = HEADER_FIXED + 8 * i;
            let d = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("length checked"));
            usize::try_from(d).map_err(|_| FormatError::Shape(format!("dimension {d} too large")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let n = element_count(&dims)?;
    let payload_len =
        n.checked_mul(dtype.size()).ok_or_else(|| FormatError::Shape(format!("dims {dims:?} overflow")))?;
    let total = header + payload_len + 4;
    need(bytes, total)?;
    if bytes.len() > total {
        return Err(FormatError::TrailingBytes { extra: bytes.len() - total });
    }
    let payload = &bytes[header..header + payload_len];
    let stored = u32::from_le_bytes(bytes[total - 4..total].try_into().expect("length checked"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::CrcMismatch { stored, computed });
    }
    let data = match dtype {
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk size"))).collect(),
        Dtype::F32 => {
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk size")) as f64).collect()
        }
    };
    Ok(Tensor { dims, data, stored_as: dtype })
}

/// Per-file metadata stored next to a tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarMeta {
    pub schema_version: u32,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub layer: Option<i64>,
    #[serde(default)]
    pub position: Option<i64>,
    #[serde(default)]
    pub rows: Vec<RowLabel>,
    /// Display names for the supervision classes.
    #[serde(default)]
    pub class_tokens: Option<Vec<String>>,
    /// Supervision matrix `Y`, as a tensor path relative to this sidecar.
    #[serde(default)]
    pub supervision: Option<String>,
}

impl SidecarMeta {
    pub fn new(rows: Vec<RowLabel>) -> Self {
        SidecarMeta {
            schema_version: SIDECAR_SCHEMA_VERSION,
            model_id: None,
            layer: None,
            position: None,
            rows,
            class_tokens: None,
            supervision: None,
        }
    }

    pub fn validate_against(&self, t: &Tensor) -> std::result::Result<(), FormatError> {
        if self.schema_version != SIDECAR_SCHEMA_VERSION {
            return Err(FormatError::Sidecar(format!(
                "schema version {} (expected {SIDECAR_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let rows = t.dims.first().copied().unwrap_or(0);
        if self.rows.len() != rows {
            return Err(FormatError::Sidecar(format!("{} row labels for a tensor with {rows} rows", self.rows.len())));
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to a temporary file in the destination directory and
/// renames it into place.
pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes the tensor (always float64) and, when given, its sidecar.
pub fn write_tensor(path: &Path, tensor: &Tensor, meta: Option<&SidecarMeta>) -> Result<()> {
    if let Some(meta) = meta {
        meta.validate_against(tensor)?;
    }
    let bytes = encode_tensor(tensor)?;
    write_bytes_atomic(path, &bytes)?;
    if let Some(meta) = meta {
        let json = serde_json::to_vec_pretty(meta)?;
        write_bytes_atomic(&sidecar_path(path), &json)?;
    }
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Option<SidecarMeta>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let meta: SidecarMeta = serde_json::from_slice(&fs::read(&side)?)
        .map_err(|e| FormatError::Sidecar(format!("{}: {e}", side.display())))?;
    Ok(Some(meta))
}

/// Reads a tensor and its sidecar if one exists.
pub fn read_tensor(path: &Path) -> Result<(Tensor, Option<SidecarMeta>)> {
    let tensor = decode_tensor(&fs::read(path)?)?;
    let meta = read_sidecar(path)?;
    if let Some(m) = &meta {
        m.validate_against(&tensor)?;
    }
    Ok((tensor, meta))
}

/// CRC-32 of a whole file, for provenance records.
pub fn file_crc32(path: &Path) -> Result<u32> {
    Ok(crc32fast::hash(&fs::read(path)?))
}
