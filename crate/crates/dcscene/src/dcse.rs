//! DCSE embedding tables.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `DCSE`                            |
//! | 4      | 4    | format version, u32 = 1                 |
//! | 8      | 8    | row count N, u64                        |
//! | 16     | 4    | dim D, u32                              |
//! | 20     | 4    | flags, u32; bit 0 = rows are normalized |
//! | 24     | ..   | N ids: u16 byte length + UTF-8 bytes    |
//! | ..     | ..   | N×D f32 payload, row-major              |

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dcscene_core::sample::NORM_TOLERANCE;
use dcscene_core::{EmbeddingTable, SampleId};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCSE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const FLAG_NORMALIZED: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeErrorKind {
    BadMagic,
    UnsupportedVersion(u32),
    UnknownFlags(u32),
    /// The file ended before a field that starts at `field_start`.
    Truncated { field_start: u64, needed: u64 },
    /// Header count and dim disagree with the payload.
    CountDimMismatch(String),
    NonFinite,
    InvalidId(String),
    DuplicateId(String),
    NotNormalized { row: u64, norm: f64 },
}

/// Decoding failure at a byte offset of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeError {
    pub offset: u64,
    pub kind: DecodeErrorKind,
}

impl DecodeError {
    pub fn is_integrity(&self) -> bool {
        matches!(
            self.kind,
            DecodeErrorKind::DuplicateId(_) | DecodeErrorKind::NotNormalized { .. }
        )
    }
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let class = if self.is_integrity() { "integrity" } else { "format" };
        write!(f, "{class} error at byte {}: ", self.offset)?;
        match &self.kind {
            DecodeErrorKind::BadMagic => write!(f, "bad magic, expected DCSE"),
            DecodeErrorKind::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            DecodeErrorKind::UnknownFlags(flags) => write!(f, "unknown flag bits {flags:#x}"),
            DecodeErrorKind::Truncated { field_start, needed } => {
                write!(f, "truncated: {needed} bytes needed from byte {field_start}")
            }
            DecodeErrorKind::CountDimMismatch(msg) => write!(f, "count/dim mismatch: {msg}"),
            DecodeErrorKind::NonFinite => write!(f, "NaN or infinite value"),
            DecodeErrorKind::InvalidId(msg) => write!(f, "invalid id: {msg}"),
            DecodeErrorKind::DuplicateId(id) => write!(f, "duplicate id {id:?}"),
            DecodeErrorKind::NotNormalized { row, norm } => {
                write!(f, "row {row} has norm {norm} but the normalized flag is set")
            }
        }
    }
}

impl std::error::Error for DecodeError {}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: u64) -> Result<&'a [u8], DecodeError> {
        let available = (self.bytes.len() - self.pos) as u64;
        if n > available {
            return Err(DecodeError {
                offset: self.bytes.len() as u64,
                kind: DecodeErrorKind::Truncated {
                    field_start: self.pos as u64,
                    needed: n,
                },
            });
        }
        let out = &self.bytes[self.pos..self.pos + n as usize];
        self.pos += n as usize;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingTable, DecodeError> {
    let err = |offset: usize, kind| DecodeError {
        offset: offset as u64,
        kind,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(err(0, DecodeErrorKind::BadMagic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(err(4, DecodeErrorKind::UnsupportedVersion(version)));
    }
    let count = r.u64()?;
    let dim = r.u32()?;
    let flags = r.u32()?;
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(err(20, DecodeErrorKind::UnknownFlags(flags)));
    }
    if dim == 0 {
        return Err(err(16, DecodeErrorKind::CountDimMismatch("dim must be positive".into())));
    }

    // Every id takes at least 3 bytes; cap the reservation by what the file can hold.
    let mut ids = Vec::with_capacity(count.min(bytes.len() as u64 / 3) as usize);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16()?;
        let raw = r.take(len as u64)?;
        let text = std::str::from_utf8(raw)
            .map_err(|e| err(at, DecodeErrorKind::InvalidId(e.to_string())))?;
        let id = SampleId::new(text).map_err(|e| err(at, DecodeErrorKind::InvalidId(e.to_string())))?;
        if !seen.insert(id.clone()) {
            return Err(err(at, DecodeErrorKind::DuplicateId(id.to_string())));
        }
        ids.push(id);
    }

    let payload_start = r.pos;
    let payload_len = count
        .checked_mul(dim as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| err(8, DecodeErrorKind::CountDimMismatch(format!("{count} x {dim} overflows"))))?;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(err(
            r.pos,
            DecodeErrorKind::CountDimMismatch(format!(
                "{} bytes follow the {count} x {dim} payload",
                bytes.len() - r.pos
            )),
        ));
    }

    let mut rows = Vec::with_capacity(payload.len() / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(err(payload_start + 4 * i, DecodeErrorKind::NonFinite));
        }
        rows.push(v);
    }

    let normalized = flags & FLAG_NORMALIZED != 0;
    if normalized {
        let row_bytes = dim as usize * 4;
        for (i, row) in rows.chunks_exact(dim as usize).enumerate() {
            let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(err(
                    payload_start + i * row_bytes,
                    DecodeErrorKind::NotNormalized { row: i as u64, norm },
                ));
            }
        }
    }

    EmbeddingTable::new(dim as usize, ids, rows, normalized)
        .map_err(|e| err(payload_start, DecodeErrorKind::CountDimMismatch(e.to_string())))
}

pub fn encode(table: &EmbeddingTable) -> Vec<u8> {
    let id_bytes: usize = table.ids().iter().map(|id| 2 + id.as_str().len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + id_bytes + table.rows().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.count() as u64).to_le_bytes());
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    let flags = if table.normalized() { FLAG_NORMALIZED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for id in table.ids() {
        let raw = id.as_str().as_bytes();
        out.extend_from_slice(&(raw.len() as u16).to_le_bytes());
        out.extend_from_slice(raw);
    }
    for v in table.rows() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Dcse {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `table`. Tables are validated on construction, so every
/// `EmbeddingTable` is writable.
pub fn write_embedding_table(table: &EmbeddingTable, path: &Path) -> Result<()> {
    if table.dim() > u32::MAX as usize {
        return Err(Error::Usage(format!("dim {} does not fit the format", table.dim())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(table))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
