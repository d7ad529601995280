//! Mono 16-bit PCM WAV files for synthesized clip audio.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

/// Samples are floats in [-1, 1]; values outside clamp on write.
pub struct WavData {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

pub fn save(path: &Path, sample_rate: u32, samples: &[f64]) -> Result<()> {
    let n = samples.len();
    let data_len = u32::try_from(n * 2)
        .map_err(|_| Error::invalid("wav::save", "clip too long for WAV container"))?;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes()); // fmt chunk size
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    write_atomic(path, &out)
}

pub fn load(path: &Path) -> Result<WavData> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    let mut data: Option<&[u8]> = None;
    // Walk chunks so files with extra metadata chunks still load.
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if pos + size > bytes.len() {
            return Err(Error::format(path, "truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format(path, "fmt chunk too short"));
                }
                let format = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
                let channels = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]);
                let bits = u16::from_le_bytes([bytes[pos + 14], bytes[pos + 15]]);
                if format != 1 || channels != 1 || bits != 16 {
                    return Err(Error::format(
                        path,
                        format!("unsupported WAV: format={format} channels={channels} bits={bits}"),
                    ));
                }
                sample_rate =
                    Some(u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()));
            }
            b"data" => data = Some(&bytes[pos..pos + size]),
            _ => {}
        }
        // Chunks are word-aligned: odd sizes carry a pad byte.
        pos += size + size % 2;
    }
    let sample_rate = sample_rate.ok_or_else(|| Error::format(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| Error::format(path, "missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok(WavData { sample_rate, samples })
}
