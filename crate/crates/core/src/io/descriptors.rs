//! Binary descriptor file: 8 magic bytes, then version, N and M as u64
//! little-endian, then N*M f32 little-endian values in row order.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::scene::DescriptorSet;

pub const DESCRIPTOR_MAGIC: [u8; 8] = *b"PTRDESC\0";
pub const DESCRIPTOR_VERSION: u64 = 1;
const HEADER_LEN: usize = 32;

/// Values are narrowed to `f32`; loading widens them back exactly.
pub fn encode_descriptors(set: &DescriptorSet) -> Result<Vec<u8>, FormatError> {
    if set.is_empty() {
        return Err(FormatError::Empty);
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * set.values().len());
    buf.extend_from_slice(&DESCRIPTOR_MAGIC);
    for v in [DESCRIPTOR_VERSION, set.len() as u64, set.dim() as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in set.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_descriptors(bytes: &[u8]) -> Result<DescriptorSet, FormatError> {
    if bytes.len() < 8 || bytes[..8] != DESCRIPTOR_MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::SizeMismatch {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let word = |k: usize| u64::from_le_bytes(bytes[8 + 8 * k..16 + 8 * k].try_into().unwrap());
    let (version, n, m) = (word(0), word(1), word(2));
    if version != DESCRIPTOR_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    if n == 0 {
        return Err(FormatError::Empty);
    }
    let expected = n
        .checked_mul(m)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    if expected != bytes.len() as u64 {
        return Err(FormatError::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DescriptorSet::new(m as usize, values).map_err(|e| FormatError::Syntax {
        line: 0,
        message: e.to_string(),
    })
}

pub fn save_descriptors(set: &DescriptorSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_descriptors(set).map_err(|k| Error::format(path, k))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_descriptors(&bytes).map_err(|k| Error::format(path, k))
}
