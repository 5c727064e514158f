//! Per-day tensor files.
//!
//! ```text
//! b"CIRT"  u32 version=1  u32 H  u32 W  u32 K  H·W·K × f32   (little-endian)
//! ```
//!
//! The payload is row-major over `(lat, lon, var)`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"CIRT";
pub const TENSOR_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::CorruptHeader {
        path: path.into(),
        detail: detail.into(),
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(path, format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(corrupt(path, "bad magic bytes"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(1) != TENSOR_VERSION {
        return Err(corrupt(path, format!("unsupported version {}", word(1))));
    }
    Ok((word(2) as usize, word(3) as usize, word(4) as usize))
}

/// Reads only the header and returns the stored `(H, W, K)`.
pub fn read_tensor_shape(path: impl AsRef<Path>) -> Result<(usize, usize, usize)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = Vec::with_capacity(HEADER_LEN);
    file.take(HEADER_LEN as u64)
        .read_to_end(&mut header)
        .map_err(|e| Error::io(path, e))?;
    parse_header(path, &header)
}

/// Decodes a tensor file, checking its shape against `expected` when given.
pub fn load_tensor(path: impl AsRef<Path>, expected: Option<(usize, usize, usize)>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let shape = parse_header(path, &bytes)?;
    if let Some(expected) = expected {
        if shape != expected {
            return Err(Error::ShapeMismatch {
                path: path.into(),
                expected,
                found: shape,
            });
        }
    }
    let len = shape.0 * shape.1 * shape.2;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len * 4 {
        return Err(corrupt(
            path,
            format!("header declares {len} values but the payload holds {} bytes", payload.len()),
        ));
    }
    let mut values = Vec::with_capacity(len);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.into(),
                index,
            });
        }
        values.push(v);
    }
    Ok(Array3::from_shape_vec(shape, values).expect("length checked"))
}

pub fn save_tensor(path: impl AsRef<Path>, values: &Array3<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, k) = values.dim();
    let mut bytes = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    bytes.extend_from_slice(TENSOR_MAGIC);
    for word in [TENSOR_VERSION, h as u32, w as u32, k as u32] {
        bytes.extend_from_slice(&word.to_le_bytes());
    }
    for v in values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}
