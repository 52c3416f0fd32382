//! Binary 8-bit PGM (`P5`) images.

use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded grayscale image, row-major, values scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_pgm(&bytes, path)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let bad = |detail: &str| Error::Pgm {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 signature"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero extent"));
    }
    // single whitespace byte before the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| bad("truncated raster"))?;
    let scale = 1.0 / maxval as f64;
    Ok(GrayImage {
        height,
        width,
        pixels: raster.iter().map(|&b| (f64::from(b) * scale).min(1.0)).collect(),
    })
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm(height, width, pixels))?;
    Ok(())
}
