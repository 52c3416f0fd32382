//! Binary checkpoint format.
//!
//! ```text
//! "VCN1"                      4 bytes
//! version                     u32 LE (= 1)
//! tensor count                u32 LE
//! per tensor:
//!   name length               u16 LE
//!   name                      UTF-8
//!   rank                      u8
//!   extents                   u64 LE x rank
//!   data                      f32 LE x product(extents)
//! ```
//!
//! Values are narrowed to `f32` on save and widened back on load.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"VCN1";
pub const VERSION: u32 = 1;

/// Byte length of the encoding of `params`.
pub fn encoded_len(params: &ParamStore) -> usize {
    12 + params
        .iter()
        .map(|(name, t)| 2 + name.len() + 1 + 8 * t.rank() + 4 * t.numel())
        .sum::<usize>()
}

pub fn write_params<W: Write>(params: &ParamStore, mut out: W) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(params.len()).map_err(|_| Error::CheckpointFormat("too many tensors".into()))?;
    out.write_all(&count.to_le_bytes())?;
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::CheckpointFormat(format!("name too long: {name}")))?;
        out.write_all(&len.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::CheckpointFormat(format!("rank too large: {name}")))?;
        out.write_all(&[rank])?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::CheckpointFormat(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_params<R: Read>(mut input: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointMagic(magic));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut input, &mut b4, "version")?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    read_exact(&mut input, &mut b4, "tensor count")?;
    let count = u32::from_le_bytes(b4);
    let mut store = ParamStore::new();
    for i in 0..count {
        let mut b2 = [0u8; 2];
        read_exact(&mut input, &mut b2, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact(&mut input, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::CheckpointFormat(format!("tensor {i}: name is not UTF-8")))?;
        let mut rank = [0u8; 1];
        read_exact(&mut input, &mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            let mut b8 = [0u8; 8];
            read_exact(&mut input, &mut b8, "extent")?;
            shape.push(usize::try_from(u64::from_le_bytes(b8)).map_err(|_| {
                Error::CheckpointFormat(format!("`{name}`: extent does not fit in memory"))
            })?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::CheckpointFormat(format!("`{name}`: extent overflow")))?;
        let mut raw = vec![0u8; numel * 4];
        read_exact(&mut input, &mut raw, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::CheckpointFormat(format!("`{name}`: {e}")))?;
        store.add(name, tensor);
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(encoded_len(params));
    write_params(params, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_params(bytes.as_slice())
}
