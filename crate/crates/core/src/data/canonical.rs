//! The canonical tensor container shared with the offline converters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CAPS"            4 bytes
//! version  u32      = 1
//! dtype    u8       0 = u8, 1 = f32
//! rank     u8
//! dims     rank x u32
//! payload  product(dims) x sizeof(dtype), row-major
//! ```

use std::path::Path;

use super::{DataError, Result};

pub const CANONICAL_MAGIC: &[u8; 4] = b"CAPS";
pub const CANONICAL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::U8 => 0,
            Dtype::F32 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

/// A tensor as stored in the container; `payload` holds raw element bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTensor {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl CanonicalTensor {
    pub fn from_u8(dims: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dtype: Dtype::U8,
            dims,
            payload: data,
        }
    }

    pub fn from_f32(dims: Vec<usize>, data: &[f32]) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dtype: Dtype::F32,
            dims,
            payload: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(CANONICAL_MAGIC);
        out.extend_from_slice(&CANONICAL_VERSION.to_le_bytes());
        out.push(self.dtype.code());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    fn header(bytes: &[u8], path: &Path) -> Result<(Dtype, Vec<usize>, usize, usize)> {
        let truncated = |offset: usize, needed: usize| DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            needed,
            available: bytes.len().saturating_sub(offset),
        };
        let head = bytes.get(..10).ok_or_else(|| truncated(0, 10))?;
        if &head[..4] != CANONICAL_MAGIC {
            return Err(DataError::BadMagic {
                path: path.to_path_buf(),
                found: u32::from_be_bytes([head[0], head[1], head[2], head[3]]),
                expected: u32::from_be_bytes(*CANONICAL_MAGIC),
            });
        }
        let version = u32::from_le_bytes([head[4], head[5], head[6], head[7]]);
        if version != CANONICAL_VERSION {
            return Err(DataError::UnknownVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let dtype = match head[8] {
            0 => Dtype::U8,
            1 => Dtype::F32,
            code => {
                return Err(DataError::UnknownDtype {
                    path: path.to_path_buf(),
                    code,
                })
            }
        };
        let rank = head[9] as usize;
        let dims_end = 10 + 4 * rank;
        let dim_bytes = bytes.get(10..dims_end).ok_or_else(|| truncated(10, 4 * rank))?;
        let dims: Vec<usize> = dim_bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .collect();
        let expected = dims.iter().product::<usize>() * dtype.size();
        Ok((dtype, dims, dims_end, expected))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (dtype, dims, start, expected) = Self::header(bytes, path)?;
        let found = bytes.len() - start;
        if found != expected {
            return Err(DataError::LengthMismatch {
                path: path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(Self {
            dtype,
            dims,
            payload: bytes[start..].to_vec(),
        })
    }

    /// Parses one tensor from the front of `bytes`, which may hold further
    /// records; returns it with the number of bytes consumed.
    pub fn from_prefix(bytes: &[u8], path: &Path) -> Result<(Self, usize)> {
        let (dtype, dims, start, len) = Self::header(bytes, path)?;
        let payload = bytes.get(start..start + len).ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            offset: start,
            needed: len,
            available: bytes.len() - start,
        })?;
        Ok((
            Self {
                dtype,
                dims,
                payload: payload.to_vec(),
            },
            start + len,
        ))
    }
}

pub fn read_canonical(path: &Path) -> Result<CanonicalTensor> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    CanonicalTensor::from_bytes(&bytes, path)
}

pub fn write_canonical(path: &Path, tensor: &CanonicalTensor) -> Result<()> {
    std::fs::write(path, tensor.to_bytes()).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = CanonicalTensor::from_u8(vec![2, 3], vec![1, 2, 3, 4, 5, 6]);
        let bytes = t.to_bytes();
        assert_eq!(
            &bytes[..18],
            &[b'C', b'A', b'P', b'S', 1, 0, 0, 0, 0, 2, 2, 0, 0, 0, 3, 0, 0, 0]
        );
        assert_eq!(&bytes[18..], &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn rejects_bad_headers() {
        let good = CanonicalTensor::from_f32(vec![2], &[1.5, -2.0]).to_bytes();
        let p = Path::new("t.caps");

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(CanonicalTensor::from_bytes(&bad, p), Err(DataError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            CanonicalTensor::from_bytes(&bad, p),
            Err(DataError::UnknownVersion { version: 2, .. })
        ));

        let mut bad = good.clone();
        bad[8] = 7;
        assert!(matches!(
            CanonicalTensor::from_bytes(&bad, p),
            Err(DataError::UnknownDtype { code: 7, .. })
        ));

        let short = &good[..good.len() - 1];
        assert!(matches!(
            CanonicalTensor::from_bytes(short, p),
            Err(DataError::LengthMismatch { expected: 8, found: 7, .. })
        ));
        assert!(matches!(
            CanonicalTensor::from_bytes(&good[..6], p),
            Err(DataError::Truncated { offset: 0, .. })
        ));
    }
}
