//! Binary checkpoint format.
//!
//! ```text
//! "PAIDCKPT"            8 bytes
//! version               u32 LE (= 1)
//! tensor count          u32 LE
//! per tensor:
//!   name length         u16 LE, then UTF-8 name
//!   rank                u8
//!   dims                u64 LE each
//!   payload             f64 LE, row-major
//! crc32                 u32 LE over every preceding byte
//! ```

use std::path::Path;

use crate::error::{PaidError, Result};
use crate::nnmodel::{ModelConfig, Network};

pub const MAGIC: &[u8; 8] = b"PAIDCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    /// Every tensor of `net`; adapted layers contribute their effective
    /// weights, so the checkpoint loads into a plain network.
    pub fn from_network(net: &Network) -> Result<Self> {
        let tensors = net
            .named_tensors()?
            .into_iter()
            .map(|(name, dims, data)| Tensor { name, dims, data })
            .collect();
        Ok(Self { tensors })
    }

    pub fn to_network(&self, config: &ModelConfig) -> Result<Network> {
        let flat: Vec<_> = self
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.dims.clone(), t.data.clone()))
            .collect();
        Network::from_tensors(config, &flat)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| PaidError::Validation("too many tensors for a checkpoint".into()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for t in &self.tensors {
            let name_len = u16::try_from(t.name.len())
                .map_err(|_| PaidError::Validation(format!("tensor name {:?} is too long", t.name)))?;
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| PaidError::Validation(format!("tensor {} has rank {}", t.name, t.dims.len())))?;
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(PaidError::Shape(format!(
                    "tensor {}: dims {:?} but {} values",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(rank);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 12 {
            return Err(PaidError::Integrity(format!("checkpoint truncated at {} bytes", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(PaidError::Integrity(format!(
                "checkpoint CRC mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(PaidError::Integrity("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(PaidError::Integrity(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("two bytes")) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| PaidError::Integrity("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes"));
                dims.push(usize::try_from(d).map_err(|_| PaidError::Integrity(format!("tensor {name}: dim {d}")))?);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| PaidError::Integrity(format!("tensor {name}: dims overflow")))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| PaidError::Integrity("payload overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            tensors.push(Tensor { name, dims, data });
        }
        if r.pos != body.len() {
            return Err(PaidError::Integrity(format!(
                "{} trailing bytes after the last tensor",
                body.len() - r.pos
            )));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            PaidError::Integrity(format!("checkpoint truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}
