//! Binary feature-file format.
//!
//! Little-endian layout: magic `FTRS` (4 bytes), `u32` version (currently 1),
//! `u32` frame count T, `u32` dimension D, then `T·D` `f64` values row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"FTRS";
const VERSION: u32 = 1;

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let (t, d) = (features.rows(), features.cols());
    let mut bytes = Vec::with_capacity(16 + features.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(t as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            wanted: 16,
            found: bytes.len(),
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "FTRS",
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let n = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::DimOverflow {
            path: path.to_path_buf(),
        })?;
    let payload = &bytes[16..];
    if payload.len() != n {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            wanted: 16 + n,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::from_vec(&[t, d], data))
}
