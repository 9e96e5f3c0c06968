//! TNSR tensor files: `b"TNSR"`, `u32` rank, `rank` x `u32` extents, then the
//! values as `f32`, all little-endian, row-major, no padding.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"TNSR";

pub fn encode_tnsr(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tnsr(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    fn word(bytes: &[u8], at: usize) -> Option<[u8; 4]> {
        bytes.get(at..at + 4).map(|b| b.try_into().unwrap())
    }
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err("bad magic bytes (expected TNSR)".into());
    }
    let rank = word(bytes, 4).map(u32::from_le_bytes).ok_or("truncated header")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let d = word(bytes, 8 + 4 * i).map(u32::from_le_bytes).ok_or("truncated extents")?;
        shape.push(d as usize);
    }
    let start = 8 + 4 * rank;
    let count: usize = shape.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 4 * count {
        return Err(format!(
            "payload holds {} bytes but shape {shape:?} needs {}",
            payload.len(),
            4 * count
        ));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn write_tnsr(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tnsr(t)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_tnsr(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    decode_tnsr(&bytes).map_err(|detail| Error::Format { path: path.to_path_buf(), detail })
}
