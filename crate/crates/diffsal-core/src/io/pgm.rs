//! Binary PGM (P5) images for saliency maps and ground truth.
//!
//! Values map linearly between [0, 1] floats and [0, maxval] integers.
//! Writing with `maxval = 65535` keeps 16 bits of precision; samples above
//! 255 are stored big-endian per the format.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes a (H, W) tensor of [0, 1] values. Out-of-range values clamp.
pub fn save(path: &Path, map: &Tensor, maxval: u16) -> Result<()> {
    if map.rank() != 2 {
        return Err(Error::invalid(
            "pgm::save",
            format!("expected rank-2 map, got shape {:?}", map.shape),
        ));
    }
    if maxval == 0 {
        return Err(Error::invalid("pgm::save", "maxval must be positive"));
    }
    let (h, w) = (map.shape[0], map.shape[1]);
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    let scale = maxval as f64;
    for &v in &map.data {
        let q = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    write_atomic(path, &out)
}

/// Reads a P5 image into a (H, W) tensor scaled to [0, 1].
pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = read_bytes(path)?;
    let mut pos = 0;
    let magic = next_token(path, &bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let w = parse_dim(path, &bytes, &mut pos, "width")?;
    let h = parse_dim(path, &bytes, &mut pos, "height")?;
    let maxval = parse_dim(path, &bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bytes_per;
    if bytes.len() < pos + need {
        return Err(Error::format(
            path,
            format!("payload truncated: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let raw = if bytes_per == 2 {
            u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as u32
        } else {
            bytes[pos + i] as u32
        };
        data.push(raw as f64 * scale);
    }
    Tensor::new(vec![h, w], data)
}

/// Skips whitespace and `#` comment lines, then returns the next token.
fn next_token<'a>(path: &Path, bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, "unexpected end of header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_dim(path: &Path, bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let token = next_token(path, bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad {what} in header")))
}
