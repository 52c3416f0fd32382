//! Big-endian IDX containers (MNIST-style `*-ubyte` files).

use std::fs;
use std::io;
use std::path::Path;

use super::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unsigned-byte, rank-3 array.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte, rank-1 array.
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: offset + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX file with the given magic, returning its extents and the
/// raw payload.
fn parse(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::WrongMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let needed = header + dims.iter().product::<usize>();
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok((dims, bytes[header..needed].to_vec()))
}

/// Loads `[N, H, W]` unsigned-byte images and `[N]` labels; pixels are
/// scaled by 1/255 into single-channel `[1, H, W]` images.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<LabeledImage>> {
    let (dims, pixels) = parse(&read_file(images_path)?, IDX_IMAGES_MAGIC, images_path)?;
    let (ldims, labels) = parse(&read_file(labels_path)?, IDX_LABELS_MAGIC, labels_path)?;
    if dims[0] != ldims[0] {
        return Err(Error::CountMismatch {
            images: dims[0],
            labels: ldims[0],
        });
    }
    let (h, w) = (dims[1], dims[2]);
    if dims[0] > 0 && (h == 0 || w == 0) {
        return Err(Error::Config(format!("{}: zero image extent", images_path.display())));
    }
    pixels
        .chunks(h * w.max(1))
        .take(dims[0])
        .zip(&labels)
        .map(|(img, &label)| {
            let data = img.iter().map(|&b| f64::from(b) / 255.0).collect();
            LabeledImage::new(Tensor::new(vec![1, h, w], data)?, label as usize)
        })
        .collect()
}

/// Writes single-channel images and labels as an IDX pair, quantising
/// pixels to the nearest of 256 levels.
pub fn write_idx(images_path: &Path, labels_path: &Path, samples: &[LabeledImage]) -> Result<()> {
    let (h, w) = match samples.first() {
        Some(s) => (s.pixels.shape()[1], s.pixels.shape()[2]),
        None => (0, 0),
    };
    let mut img = Vec::with_capacity(16 + samples.len() * h * w);
    img.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [samples.len(), h, w] {
        img.extend((d as u32).to_be_bytes());
    }
    let mut lab = Vec::with_capacity(8 + samples.len());
    lab.extend(IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend((samples.len() as u32).to_be_bytes());
    for s in samples {
        if s.pixels.shape() != [1, h, w] {
            return Err(Error::Config(format!(
                "IDX images must all be [1, {h}, {w}], got {:?}",
                s.pixels.shape()
            )));
        }
        let label = u8::try_from(s.label).map_err(|_| Error::Config(format!("label {} exceeds a byte", s.label)))?;
        img.extend(s.pixels.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        lab.push(label);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}
