//! PTNS1 tensor files: `PTNS1\n`, u32 rank, rank x u32 dims, then the
//! float64 payload. All integers and floats are little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const PTNS_MAGIC: &[u8; 6] = b"PTNS1\n";

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(PTNS_MAGIC.len() + 4 * (tensor.rank() + 1) + 8 * tensor.len());
    buf.extend_from_slice(PTNS_MAGIC);
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(mut bytes: &[u8]) -> Result<Tensor> {
    let bad = |detail: &str| Error::Format {
        what: "PTNS1 file",
        detail: detail.to_string(),
    };
    let mut magic = [0u8; 6];
    bytes
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != PTNS_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 4];
    bytes.read_exact(&mut word).map_err(|_| bad("missing rank"))?;
    let rank = u32::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        bytes.read_exact(&mut word).map_err(|_| bad("missing dims"))?;
        shape.push(u32::from_le_bytes(word) as usize);
    }
    let n: usize = shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(bad(&format!(
            "payload has {} bytes, shape {:?} needs {}",
            bytes.len(),
            shape,
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_ptns(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_ptns(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
