//! Portable weight container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "DYNW"  u16 version (=1)  u16 flags
//! u32 header length, UTF-8 JSON header
//! u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank,
//!             u32 dims[rank], raw values row-major
//! ```

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DYNW";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("tensor {name}: dims {dims:?} do not match {} values", data.len())));
        }
        Ok(StoredTensor { name, dims, data })
    }
}

/// Ordered named tensors plus a JSON header (which carries the model-spec
/// fingerprint for model weights).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    pub header: Value,
    pub flags: u16,
    pub tensors: Vec<StoredTensor>,
}

impl WeightStore {
    pub fn new(header: Value) -> Self {
        WeightStore { header, flags: 0, tensors: Vec::new() }
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.header.get("fingerprint").and_then(Value::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push(&mut self, t: StoredTensor) -> Result<()> {
        if self.get(&t.name).is_some() {
            return Err(Error::Format(format!("duplicate tensor name {}", t.name)));
        }
        self.tensors.push(t);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(64 + header.len() + self.tensors.iter().map(|t| t.data.len() * 4 + 64).sum::<usize>());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&u32_len(header.len(), "header")?.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&u32_len(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(DTYPE_F32);
            let rank = u8::try_from(t.dims.len()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
            out.push(rank);
            for &d in &t.dims {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let flags = r.u16("flags")?;
        let header_len = r.u32("header length")? as usize;
        let header_bytes = r.take(header_len, "header")?;
        let header: Value = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("header is not valid JSON: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut store = WeightStore { header, flags, tensors: Vec::with_capacity(count.min(1 << 16)) };
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {name}: unsupported dtype code {dtype}")));
            }
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format(format!("tensor {name}: dims overflow")))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?, &name)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect();
            store.push(StoredTensor { name, dims, data })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!("{what} at byte {}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}
