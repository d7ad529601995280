//! Serialization: tensor files, checkpoints, PGM maps, WAV audio, fixation
//! lists, and dataset manifests.

pub mod checkpoint;
pub mod dstn;
pub mod manifest;
pub mod pgm;
pub mod wav;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Write a file atomically: stage into a sibling temp file, then rename.
/// Re-runs with identical content therefore never leave partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read whole file with path-carrying errors.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse lines of `row col` integer pairs (blank lines and `#` comments
/// allowed) into fixation coordinates.
pub fn read_fixations(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::format(path, "fixation file is not UTF-8"))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                Error::format(path, format!("line {}: expected `row col`", lineno + 1))
            })
        };
        let row = parse(parts.next())?;
        let col = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::format(
                path,
                format!("line {}: trailing tokens after `row col`", lineno + 1),
            ));
        }
        out.push((row, col));
    }
    Ok(out)
}

/// Serialize fixations as `row col` lines.
pub fn write_fixations(path: &Path, fixations: &[(usize, usize)]) -> Result<()> {
    let mut text = String::new();
    for &(r, c) in fixations {
        text.push_str(&format!("{r} {c}\n"));
    }
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fix.txt");
        let fx = vec![(3, 7), (0, 0), (15, 31)];
        write_fixations(&path, &fx).unwrap();
        assert_eq!(read_fixations(&path).unwrap(), fx);
    }

    #[test]
    fn fixations_reject_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fix.txt");
        std::fs::write(&path, "3 4\nfive six\n").unwrap();
        assert!(read_fixations(&path).is_err());
    }
}
