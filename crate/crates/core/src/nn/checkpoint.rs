//! Versioned binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HMCK" | version: u32 | count: u32 |
//!   count × ( name_len: u32 | name: utf-8 | ndim: u32 | dims: u64 × ndim | values: f64 × Π dims )
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HMCK";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered name → tensor table. Insertion order is preserved so that equal
/// content always serializes to equal bytes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Checkpoint(format!("duplicate entry {name}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn set_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.insert(name, Tensor::scalar(value))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        if t.len() != 1 {
            return Err(Error::Checkpoint(format!("{name} is not a scalar")));
        }
        Ok(t.item())
    }

    pub fn usize(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Checkpoint(format!("{name} = {v} is not a count")));
        }
        Ok(v as usize)
    }

    /// Stores UTF-8 text as a vector of byte values.
    pub fn set_text(&mut self, name: &str, text: &str) -> Result<()> {
        if text.is_empty() {
            return Err(Error::Checkpoint(format!("{name}: empty text")));
        }
        self.insert(name, Tensor::vector(text.bytes().map(f64::from).collect()))
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let bytes: Vec<u8> = self
            .require(name)?
            .data()
            .iter()
            .map(|&b| b as u8)
            .collect();
        String::from_utf8(bytes).map_err(|_| Error::Checkpoint(format!("{name} is not UTF-8")))
    }

    /// Adds every parameter under `prefix`.
    pub fn insert_params(&mut self, prefix: &str, store: &ParamStore) -> Result<()> {
        for (name, value) in store.named_values() {
            self.insert(format!("{prefix}{name}"), value.clone())?;
        }
        Ok(())
    }

    pub fn load_params(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        store.load_from(|name| self.get(&format!("{prefix}{name}")).cloned())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = core::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Checkpoint(format!("entry {name}: truncated or oversized")))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("entry {name}: {e}")))?;
            ck.insert(name, t)?;
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(ck)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
