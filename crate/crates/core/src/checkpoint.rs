//! `MVNW` parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MVNW"            4 bytes
//! version           u16 (= 1)
//! repeated until EOF:
//!   name length     u32
//!   name            UTF-8 bytes
//!   rank            u8
//!   extents         u32 × rank
//!   payload         f32 × product(extents)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MVNW";
pub const VERSION: u16 = 1;

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        out.extend_from_slice(nb);
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Dimension(format!("`{name}` has rank {} > 255", t.rank())))?;
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e)
                .map_err(|_| Error::Dimension(format!("`{name}` extent {e} exceeds u32")))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<ParamStore> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected MVNW"));
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut store = ParamStore::new();
    while cur.pos < buf.len() {
        let at = cur.pos as u64;
        let nlen = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(nlen, "name")?)
            .map_err(|_| Error::format(at + 4, "name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = cur.take(n * 4, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let t = Tensor::new(&shape, data)
            .map_err(|e| Error::format(at, format!("record `{name}`: {e}")))?;
        store.insert(name, t);
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = encode(store)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}
