//! Binary parameter container.
//!
//! ```text
//! magic     8 bytes  "UWSCKPT\0"
//! version   u32 LE
//! count     u32 LE   number of records
//! record    name_len u32 LE | name (UTF-8) | rank u32 LE |
//!           extents (rank x u64 LE) | values (prod(extents) x f64 LE)
//! ```
//!
//! Records appear in the model's parameter order; buffers (running batch
//! norm statistics) are stored alongside trainable tensors.

use std::io::{Read, Write};

use super::nn::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UWSCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(store: &ParamStore, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.get(id);
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &e in t.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated checkpoint: {e}"))
}

/// Reads every record into a fresh store (all marked trainable; use
/// [`ParamStore::load_from`] to copy into a model).
pub fn read_checkpoint(mut r: impl Read) -> Result<ParamStore> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(Error::Format(format!("implausible parameter name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("parameter name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("`{name}`: rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(truncated)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}
