//! IDX files as used by the MNIST family: big-endian `u32` magic whose low
//! byte is the rank, one big-endian `u32` per dimension, then `u8` payload.

use std::io::Read;
use std::path::Path;

use super::{DataError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Reads an IDX file, transparently gunzipping `*.gz`.
pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let raw = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| DataError::io(path, e))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes, path, expected_magic)
}

pub fn parse_idx(bytes: &[u8], path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let truncated = |offset: usize, needed: usize| DataError::Truncated {
        path: path.to_path_buf(),
        offset,
        needed,
        available: bytes.len().saturating_sub(offset),
    };
    let read_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| truncated(offset, 4))
    };
    let magic = read_u32(0)?;
    if magic != expected_magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: expected_magic,
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|k| read_u32(4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = bytes.get(start..start + len).ok_or_else(|| truncated(start, len))?;
    if bytes.len() > start + len {
        return Err(DataError::LengthMismatch {
            path: path.to_path_buf(),
            expected: start + len,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}
