//! Binary feature files: magic `VSLF`, `u32` version, `u32` clip count,
//! `u32` dimension, then row-major little-endian `f32` values.

use std::fs;
use std::io;
use std::path::Path;

use vslan_core::Tensor;

use crate::error::{Result, VslanError};

pub const MAGIC: [u8; 4] = *b"VSLF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid contents: {0}")]
    Invalid(String),
}

/// Serializes a `[N, dim]` tensor.
pub fn encode(t: &Tensor) -> std::result::Result<Vec<u8>, FeatureError> {
    if t.rank() != 2 {
        return Err(FeatureError::Invalid(format!("expected a matrix, got shape {:?}", t.shape())));
    }
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, n as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, FeatureError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(FeatureError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FeatureError::Version { found: version });
    }
    let n = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    let expected = HEADER_LEN + 4 * n * d;
    if bytes.len() < expected {
        return Err(FeatureError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FeatureError::Invalid(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(vec![n, d], data).map_err(|e| FeatureError::Invalid(e.to_string()))
}

pub fn write_features(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode(t).map_err(|source| VslanError::Feature {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| VslanError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| VslanError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e: io::Error| VslanError::io(path, e))?;
    decode(&bytes).map_err(|source| VslanError::Feature {
        path: path.to_path_buf(),
        source,
    })
}
