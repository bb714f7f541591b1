//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"MIXADCKP"
//! version u32 = 1
//! n_meta  u32, then n_meta × (key: str, value: str)
//! n_param u32, then n_param × (name: str, ndim: u32, dims: ndim × u64, data: numel × f64)
//! str     = u32 byte length + UTF-8 bytes
//! ```
//!
//! Values are stored as raw IEEE-754 bits so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MIXADCKP";
const VERSION: u32 = 1;

pub type Metadata = Vec<(String, String)>;

pub fn encode(meta: &[(String, String)], params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Metadata, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_meta = r.u32()?;
    let mut meta = Vec::with_capacity(n_meta as usize);
    for _ in 0..n_meta {
        let k = r.string()?;
        let v = r.string()?;
        meta.push((k, v));
    }
    let n_param = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..n_param {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if params.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        params.add(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((meta, params))
}

pub fn save(path: &Path, meta: &[(String, String)], params: &ParamStore) -> Result<()> {
    crate::data::write_atomic(path, &encode(meta, params))
}

pub fn load(path: &Path) -> Result<(Metadata, ParamStore)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.write_all(s.as_bytes()).unwrap();
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
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
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}
