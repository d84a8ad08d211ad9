//! Binary feature-matrix container.
//!
//! Layout, little-endian: magic `EVFM`, `u32` version, `u64` rows, `u64`
//! columns, then `rows * cols` `f64` values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EVFM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn encode_features(features: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * features.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(features.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.ncols() as u64).to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let fail = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(fail("not a feature matrix file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let rows = usize::try_from(u64_at(8)).map_err(|_| fail("row count overflows".into()))?;
    let cols = usize::try_from(u64_at(16)).map_err(|_| fail("column count overflows".into()))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| fail("matrix size overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(fail(format!(
            "{rows}x{cols} matrix needs {expected} data bytes, found {}",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite feature value".into()));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| fail(e.to_string()))
}

pub fn write_features(path: impl AsRef<Path>, features: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = ndarray::array![[1.0, -2.5], [0.0, 3.25], [7.0, 1e-9]];
        let back = decode_features(&encode_features(&m), Path::new("x")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_input() {
        let m = ndarray::array![[1.0]];
        let mut bytes = encode_features(&m);
        bytes.pop();
        assert!(decode_features(&bytes, Path::new("x")).is_err());
        assert!(decode_features(b"nope", Path::new("x")).is_err());
        let mut bytes = encode_features(&m);
        bytes[4] = 9;
        assert!(decode_features(&bytes, Path::new("x")).is_err());
    }
}
