//! Checkpoint container: named f32 tensors in a fixed little-endian layout.
//!
//! magic "CGAN" | version u16 | count u32 | per tensor:
//! name_len u16, UTF-8 name, rank u8, extents u32 each, f32 data.
//!
//! The container is flat on purpose: model parameters, optimizer moments, and
//! trainer counters all ride as named tensors under prefixes ("g.", "d.opt.",
//! ...), so resuming restores everything from one file.

use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CGAN";
pub const VERSION: u16 = 1;

pub type Entries = Vec<(String, Tensor<f32>)>;

pub fn to_bytes(entries: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(
        &u32::try_from(entries.len())
            .map_err(|_| Error::checkpoint("too many tensors"))?
            .to_le_bytes(),
    );
    for (name, t) in entries {
        let name_len =
            u16::try_from(name.len()).map_err(|_| Error::checkpoint("tensor name too long"))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let rank =
            u8::try_from(t.shape().len()).map_err(|_| Error::checkpoint("rank exceeds u8"))?;
        buf.push(rank);
        for &e in t.shape() {
            buf.extend_from_slice(
                &u32::try_from(e)
                    .map_err(|_| Error::checkpoint("extent exceeds u32"))?
                    .to_le_bytes(),
            );
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn save(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    std::fs::write(path, to_bytes(entries)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Entries> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::checkpoint("bad magic, not a checkpoint file"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::checkpoint("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::checkpoint(format!(
            "{} trailing bytes after {count} tensors",
            buf.len() - r.pos
        )));
    }
    Ok(entries)
}

pub fn load(path: &Path) -> Result<Entries> {
    from_bytes(&std::fs::read(path)?)
}

/// A parameter store as prefixed checkpoint entries, in store order.
pub fn store_entries<T: Scalar>(prefix: &str, store: &ParamStore<T>) -> Entries {
    store
        .iter()
        .map(|(name, t)| (format!("{prefix}{name}"), t.cast::<f32>()))
        .collect()
}

/// Fill a parameter store from prefixed entries; every parameter must be
/// present with its exact shape.
pub fn load_store<T: Scalar>(
    entries: &[(String, Tensor<f32>)],
    prefix: &str,
    store: &mut ParamStore<T>,
) -> Result<()> {
    store.load_values(|name| {
        let full = format!("{prefix}{name}");
        entries
            .iter()
            .find(|(n, _)| *n == full)
            .map(|(_, t)| t.cast::<T>())
    })
}

/// Fetch one entry by exact name.
pub fn find<'a>(entries: &'a [(String, Tensor<f32>)], name: &str) -> Result<&'a Tensor<f32>> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::checkpoint(format!("missing entry {name}")))
}
