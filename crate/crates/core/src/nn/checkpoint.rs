//! Versioned binary container for named parameter arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "HSODCKPT"
//! version      u32       currently 1
//! scalar       u8        element width in bytes (4 = f32, 8 = f64)
//! config_len   u32
//! config       bytes     UTF-8 JSON echo of the network configuration
//! count        u32       number of arrays
//! repeated count times:
//!   name_len   u32
//!   name       bytes     UTF-8
//!   rank       u8
//!   dims       u64 × rank
//!   data       scalar × product(dims), row-major, little-endian
//! ```

use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

pub const MAGIC: &[u8; 8] = b"HSODCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: String,
    pub arrays: Vec<(String, Tensor<T>)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES);
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let width = r.u8()?;
        if width != T::BYTES {
            return Err(Error::Checkpoint(format!("scalar width {width} does not match requested {}", T::BYTES)));
        }
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u8()? as usize;
            if rank != 4 {
                return Err(Error::Checkpoint(format!("{name}: rank {rank}, expected 4")));
            }
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = r.u64()? as usize;
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * T::BYTES as usize)?;
            let data: Vec<T> = raw.chunks_exact(T::BYTES as usize).map(T::read_le).collect();
            let t = Tensor::from_shape_vec(dims, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            arrays.push((name, t));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { config, arrays })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
