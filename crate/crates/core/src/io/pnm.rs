//! Binary PGM/PPM import and PGM preview export.

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Parses the next header token, skipping whitespace and `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Decode("truncated PNM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Decode(format!("bad PNM {what} {:?}", String::from_utf8_lossy(t))))
}

/// Decodes P5 (grey) or P6 (RGB) with maxval ≤ 65535 into `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        b"P1" | b"P2" | b"P3" | b"P4" | b"P7" => {
            return Err(Error::Unsupported(format!(
                "PNM variant {} (only binary P5/P6 are supported)",
                String::from_utf8_lossy(magic)
            )))
        }
        _ => return Err(Error::Decode("not a PNM file".into())),
    };
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Unsupported(format!("PNM maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Decode("missing whitespace after PNM header".into()));
    }
    pos += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Decode(format!("PNM dimensions {width}x{height} overflow")))?;
    let expected = n * sample_bytes;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::Decode(format!(
            "truncated PNM payload: expected {expected} bytes, got {}",
            payload.len()
        )));
    }
    let max = maxval as f64;
    let sample = |i: usize| -> f64 {
        let v = if sample_bytes == 1 {
            payload[i] as u32
        } else {
            u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as u32
        };
        (v as f64 / max).min(1.0)
    };
    let plane = width * height;
    let mut data = vec![0.0; n];
    for px in 0..plane {
        for c in 0..channels {
            data[c * plane + px] = sample(px * channels + c);
        }
    }
    Raster::from_vec(channels, height, width, data)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Raster> {
    decode_pnm(&std::fs::read(path)?)
}

/// 8-bit P5 encoding of values in `[0, 1]` (clamped).
pub fn encode_pgm(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::contract("PGM values do not match extents"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Log-scale preview of a positive raster: channels side by side, each
/// `ln(v)` min/max-scaled over the whole image.
pub fn log_preview(r: &Raster) -> (Vec<f64>, usize, usize) {
    let (c, h, w) = r.shape();
    let logs: Vec<f64> = r.data().iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = vec![0.0; h * w * c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[y * w * c + ch * w + x] = (logs[(ch * h + y) * w + x] - lo) / span;
            }
        }
    }
    (out, h, w * c)
}

pub fn write_log_preview(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let (v, h, w) = log_preview(r);
    write_atomic(path, &encode_pgm(&v, h, w)?)
}
