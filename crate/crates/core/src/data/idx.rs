use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            detail: format!("truncated {what}"),
        })
}

/// Parses an IDX file whose magic must equal `expected_magic`. The low byte
/// of the magic gives the rank; the element type must be unsigned byte.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != expected_magic {
        return Err(Error::Format {
            offset: 0,
            detail: format!("IDX magic {magic:#010x}, expected {expected_magic:#010x}"),
        });
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(be_u32(bytes, 4 + 4 * i, "dimension")? as usize);
    }
    let start = 4 + 4 * rank;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            offset: 4,
            detail: "dimension product overflows".into(),
        })?;
    let available = bytes.len().saturating_sub(start);
    if available < n {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            detail: format!("truncated payload: {n} bytes declared, {available} present"),
        });
    }
    if available > n {
        return Err(Error::Format {
            offset: (start + n) as u64,
            detail: format!("{} trailing bytes", available - n),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[start..].to_vec(),
    })
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, expected_magic)
}

/// Serializes an unsigned-byte IDX array (used for fixtures).
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&(0x0800u32 | dims.len() as u32).to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
