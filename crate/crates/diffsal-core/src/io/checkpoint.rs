//! Checkpoints: a flat sequence of named tensor records.
//!
//! Each record is `name_len: u16 LE`, `name: UTF-8 bytes`, then one DSTN
//! tensor. Order is the parameter registration order, so a round trip is
//! byte-stable.

use std::path::Path;

use super::{dstn, read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut out = Vec::new();
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        let len = u16::try_from(name_bytes.len())
            .map_err(|_| Error::invalid("checkpoint", format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.extend_from_slice(&dstn::to_bytes(tensor)?);
    }
    write_atomic(path, &out)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = read_bytes(path)?;
    let mut offset = 0;
    let mut entries = Vec::new();
    while offset < bytes.len() {
        if offset + 2 > bytes.len() {
            return Err(Error::format(path, "truncated record header"));
        }
        let len = u16::from_le_bytes([bytes[offset], bytes[offset + 1]]) as usize;
        offset += 2;
        if offset + len > bytes.len() {
            return Err(Error::format(path, "truncated record name"));
        }
        let name = std::str::from_utf8(&bytes[offset..offset + len])
            .map_err(|_| Error::format(path, "record name is not UTF-8"))?
            .to_string();
        offset += len;
        let tensor = dstn::from_bytes(path, &bytes, &mut offset)?;
        entries.push((name, tensor));
    }
    Ok(entries)
}
