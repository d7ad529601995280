//! Binary tensor file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "DSTN"
//! version u8       currently 1
//! rank    u8
//! dims    rank x u32
//! payload product(dims) x f32, row-major
//! ```
//!
//! Values are widened to `f64` on load; saving narrows to `f32`.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DSTN";
pub const VERSION: u8 = 1;

/// Encode a tensor into the container bytes.
pub fn to_bytes(tensor: &Tensor) -> Result<Vec<u8>> {
    if tensor.rank() > u8::MAX as usize {
        return Err(Error::invalid("dstn", "rank exceeds 255"));
    }
    let mut out = Vec::with_capacity(6 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(tensor.rank() as u8);
    for &d in &tensor.shape {
        let d = u32::try_from(d).map_err(|_| Error::invalid("dstn", "dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in &tensor.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decode one tensor starting at `bytes[*offset]`, advancing the offset.
pub fn from_bytes(path: &Path, bytes: &[u8], offset: &mut usize) -> Result<Tensor> {
    let err = |msg: &str| Error::format(path, msg.to_string());
    let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
        let start = *offset;
        let end = start.checked_add(n).ok_or_else(|| err("length overflow"))?;
        if end > bytes.len() {
            return Err(err("truncated tensor record"));
        }
        *offset = end;
        Ok(&bytes[start..end])
    };
    if take(offset, 4)? != MAGIC {
        return Err(err("bad magic, not a DSTN tensor"));
    }
    let version = take(offset, 1)?[0];
    if version != VERSION {
        return Err(err(&format!("unsupported version {version}")));
    }
    let rank = take(offset, 1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = take(offset, 4)?;
        shape.push(u32::from_le_bytes([d[0], d[1], d[2], d[3]]) as usize);
    }
    let count: usize = shape.iter().product();
    let payload = take(offset, count * 4)?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Tensor::new(shape, data)
}

pub fn save(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &to_bytes(tensor)?)
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = read_bytes(path)?;
    let mut offset = 0;
    let tensor = from_bytes(path, &bytes, &mut offset)?;
    if offset != bytes.len() {
        return Err(Error::format(path, "trailing bytes after tensor payload"));
    }
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_exact_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dstn");
        let t = Tensor::new(vec![2, 3], vec![1.0, -0.5, 0.25, 3.0, 0.0, -128.0]).unwrap();
        save(&path, &t).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.shape, t.shape);
        assert_eq!(back.data, t.data);
    }

    #[test]
    fn scalar_rank_zero_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.dstn");
        save(&path, &Tensor::scalar(2.5)).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.shape, Vec::<usize>::new());
        assert_eq!(back.data, vec![2.5]);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dstn");
        std::fs::write(&path, b"NOPE\x01\x00").unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.dstn");
        let mut bytes = to_bytes(&Tensor::ones(&[4])).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());
    }
}
