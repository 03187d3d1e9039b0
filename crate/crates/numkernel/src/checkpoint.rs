//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MSTFCKPT"
//! version  u32
//! meta     u32 length + UTF-8 bytes (free-form, typically JSON)
//! count    u32
//! block*   u32 name length + UTF-8 name
//!          u32 rank, rank × u64 extents
//!          product(extents) × f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{KernelError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MSTFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub metadata: String,
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(metadata: String, blocks: Vec<(String, Tensor)>) -> Self {
        Self {
            version: FORMAT_VERSION,
            metadata,
            blocks,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        write_str(&mut out, &self.metadata);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, tensor) in &self.blocks {
            write_str(&mut out, name);
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(KernelError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(KernelError::Checkpoint(format!("unsupported version {version}")));
        }
        let metadata = r.string()?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            blocks.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(KernelError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            version,
            metadata,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(KernelError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| KernelError::Checkpoint(e.to_string()))
    }
}
