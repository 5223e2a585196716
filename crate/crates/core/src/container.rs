//! Little-endian binary containers shared by the trajectory, sequence and
//! checkpoint file formats.
//!
//! Parameter checkpoints (`RPRM`) and optimizer checkpoints (`OPTM`) share one
//! layout:
//!
//! ```text
//! magic [4]  version u16  config_hash u64  step u64  n_vectors u32  len u64
//! then n_vectors blocks of len little-endian f64
//! ```
//!
//! `RPRM` stores a single vector (the parameters) with `step = 0`; `OPTM`
//! stores the first and second moment vectors and the Adam step counter.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 4] = b"RPRM";
pub const OPTIM_MAGIC: &[u8; 4] = b"OPTM";
pub const CONTAINER_VERSION: u16 = 1;

/// Sequential little-endian reader that reports which section ran short.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], format: &'static str) -> Self {
        Self {
            buf,
            pos: 0,
            format,
        }
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse {
                format: self.format,
                section,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::Parse {
                format: self.format,
                section: "magic",
            });
        }
        Ok(())
    }

    pub fn u16(&mut self, section: &'static str) -> Result<u16> {
        let b = self.take(2, section)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, section: &'static str) -> Result<u64> {
        let b = self.take(8, section)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn f64_vec(&mut self, n: usize, section: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8, section)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f32_vec(&mut self, n: usize, section: &'static str) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4, section)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Contents of an `RPRM` or `OPTM` file.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorContainer {
    pub config_hash: u64,
    pub step: u64,
    pub vectors: Vec<Vec<f64>>,
}

impl VectorContainer {
    pub fn encode(&self, magic: &[u8; 4]) -> Result<Vec<u8>> {
        let len = self.vectors.first().map_or(0, Vec::len);
        if self.vectors.iter().any(|v| v.len() != len) {
            return Err(Error::InvalidArgument(
                "all vectors in a container must have equal length".into(),
            ));
        }
        let mut out = Vec::with_capacity(30 + self.vectors.len() * len * 8);
        out.extend_from_slice(magic);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.vectors.len() as u32).to_le_bytes());
        out.extend_from_slice(&(len as u64).to_le_bytes());
        for v in &self.vectors {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 4], format: &'static str) -> Result<Self> {
        let mut r = Reader::new(bytes, format);
        r.magic(magic)?;
        let version = r.u16("version")?;
        if version != CONTAINER_VERSION {
            return Err(Error::Version {
                format,
                found: version,
                expected: CONTAINER_VERSION,
            });
        }
        let config_hash = r.u64("config hash")?;
        let step = r.u64("step counter")?;
        let n_vectors = r.u32("vector count")? as usize;
        let len = r.u64("vector length")? as usize;
        let expected = n_vectors
            .checked_mul(len)
            .and_then(|n| n.checked_mul(8))
            .ok_or(Error::Parse {
                format,
                section: "vector length",
            })?;
        if r.remaining() != expected {
            return Err(Error::shape(
                format!("{expected} payload bytes"),
                format!("{} bytes", r.remaining()),
            ));
        }
        let vectors = (0..n_vectors)
            .map(|_| r.f64_vec(len, "payload"))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config_hash,
            step,
            vectors,
        })
    }

    pub fn save(&self, path: &Path, magic: &[u8; 4]) -> Result<()> {
        write_file(path, &self.encode(magic)?)
    }

    pub fn load(path: &Path, magic: &[u8; 4], format: &'static str) -> Result<Self> {
        Self::decode(&read_file(path)?, magic, format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let c = VectorContainer {
            config_hash: 0xdead_beef,
            step: 17,
            vectors: vec![vec![1.0, -2.5, f64::MIN_POSITIVE], vec![0.0, 3.0, 1e300]],
        };
        let bytes = c.encode(OPTIM_MAGIC).unwrap();
        assert_eq!(VectorContainer::decode(&bytes, OPTIM_MAGIC, "OPTM").unwrap(), c);
    }

    #[test]
    fn wrong_magic_and_short_payload() {
        let c = VectorContainer {
            config_hash: 1,
            step: 0,
            vectors: vec![vec![1.0; 4]],
        };
        let bytes = c.encode(PARAMS_MAGIC).unwrap();
        assert!(matches!(
            VectorContainer::decode(&bytes, OPTIM_MAGIC, "OPTM"),
            Err(Error::Parse { section: "magic", .. })
        ));
        assert!(matches!(
            VectorContainer::decode(&bytes[..bytes.len() - 3], PARAMS_MAGIC, "RPRM"),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            VectorContainer::decode(&bytes[..10], PARAMS_MAGIC, "RPRM"),
            Err(Error::Parse { section: "config hash", .. })
        ));
    }
}
