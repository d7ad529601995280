//! Dataset manifests: one tab-separated line per sample.
//!
//! Columns are `id  clip_path  wav_path  gt_path  fix_path  seed`. Paths are
//! stored relative to the manifest file and resolved against its directory on
//! load, so a dataset directory can be moved wholesale.

use std::path::{Path, PathBuf};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub clip: PathBuf,
    pub wav: PathBuf,
    pub gt: PathBuf,
    pub fix: PathBuf,
    pub seed: u64,
}

pub fn save(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.id,
            e.clip.display(),
            e.wav.display(),
            e.gt.display(),
            e.fix.display(),
            e.seed
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Loads entries with paths resolved against the manifest's directory.
pub fn load(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::format(
                path,
                format!("line {}: expected 6 tab-separated fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let seed = fields[5].trim().parse().map_err(|_| {
            Error::format(path, format!("line {}: bad seed {:?}", lineno + 1, fields[5]))
        })?;
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            clip: base.join(fields[1]),
            wav: base.join(fields[2]),
            gt: base.join(fields[3]),
            fix: base.join(fields[4]),
            seed,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_resolves_paths_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let entries = vec![ManifestEntry {
            id: "sample_000".to_string(),
            clip: PathBuf::from("sample_000/clip.dstn"),
            wav: PathBuf::from("sample_000/audio.wav"),
            gt: PathBuf::from("sample_000/gt.pgm"),
            fix: PathBuf::from("sample_000/fixations.txt"),
            seed: 42,
        }];
        save(&path, &entries).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].id, "sample_000");
        assert_eq!(back[0].clip, dir.path().join("sample_000/clip.dstn"));
        assert_eq!(back[0].seed, 42);
    }

    #[test]
    fn empty_manifest_loads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        save(&path, &[]).unwrap();
        assert!(load(&path).unwrap().is_empty());
    }

    #[test]
    fn wrong_field_count_is_an_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "a\tb\tc\n").unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
