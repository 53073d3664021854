//! Little-endian binary containers.
//!
//! Feature matrix: `"PRFT" | u32 version=1 | u32 d | u32 T | d·T f32`, frame-major.
//! Label sidecar:  `"PRLB" | u32 version=1 | u32 T | T bytes of 0/1`.

use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_file};

pub const MATRIX_MAGIC: [u8; 4] = *b"PRFT";
pub const LABEL_MAGIC: [u8; 4] = *b"PRLB";
const VERSION: u32 = 1;

pub fn encode_matrix(m: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.values().len() * 4);
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.d() as u32).to_le_bytes());
    out.extend_from_slice(&(m.frames() as u32).to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_header(bytes: &[u8], magic: [u8; 4], header_len: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    Ok(())
}

fn check_payload(found: usize, expected: usize) -> Result<()> {
    if found < expected {
        Err(Error::Truncated { expected, found })
    } else if found > expected {
        Err(Error::TrailingBytes { expected, found })
    } else {
        Ok(())
    }
}

pub fn decode_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    check_header(bytes, MATRIX_MAGIC, 16)?;
    let (d, t) = (u32_at(bytes, 8) as u64, u32_at(bytes, 12) as u64);
    let expected = d
        .checked_mul(t)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(Error::SizeOverflow { d, t })?;
    check_payload(bytes.len() - 16, expected)?;
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    FeatureMatrix::new(d as usize, t as usize, values)
}

pub fn write_container(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    atomic_write(path, &encode_matrix(matrix))
}

pub fn read_container(path: &Path) -> Result<FeatureMatrix> {
    decode_matrix(&read_file(path)?)
}

pub fn encode_labels(labels: &[bool]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<bool>> {
    check_header(bytes, LABEL_MAGIC, 12)?;
    let t = u32_at(bytes, 8) as usize;
    check_payload(bytes.len() - 12, t)?;
    bytes[12..]
        .iter()
        .enumerate()
        .map(|(index, &value)| match value {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidLabel { index, value }),
        })
        .collect()
}

pub fn write_labels(labels: &[bool], path: &Path) -> Result<()> {
    atomic_write(path, &encode_labels(labels))
}

pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    decode_labels(&read_file(path)?)
}
