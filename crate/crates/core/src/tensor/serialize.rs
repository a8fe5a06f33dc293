//! "CAAN" model files: named f32 tensors, little-endian.
//!
//! ```text
//! b"CAAN" | version: u32 | repeated { name_len: u32 | name: utf-8 |
//!                                     rank: u32 | dims: u32 × rank |
//!                                     values: f32 × prod(dims) }
//! ```

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CAAN";
pub const MODEL_VERSION: u32 = 1;

/// Upper bound on elements in one record, to reject absurd headers before
/// allocating.
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn encode_model(records: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("model file does not start with CAAN".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let mut records = Vec::new();
    while !r.is_empty() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("record {name} claims rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for _ in 0..rank {
            let d = r.u32("dimension")?;
            count = count.saturating_mul(d as u64);
            dims.push(d as usize);
        }
        if count == 0 || count > MAX_ELEMENTS {
            return Err(Error::Format(format!("record {name} has invalid dims {dims:?}")));
        }
        let data = r.f32s(count as usize, &name)?;
        let t = if rank == 0 {
            Tensor::scalar(data[0])
        } else {
            Tensor::new(&dims, data)?
        };
        records.push((name, t));
    }
    Ok(records)
}

pub fn write_model(path: &Path, records: &[(String, Tensor<f32>)]) -> Result<()> {
    fs::write(path, encode_model(records)).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Little-endian cursor that reports short reads as truncation.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what}: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{what}: element count overflows")))?;
        let b = self.take(len, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}
