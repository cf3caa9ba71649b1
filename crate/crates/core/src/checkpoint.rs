//! Parameter checkpoint archive.
//!
//! Flat binary format: a header with magic, version, element precision and
//! the run's RNG seed, followed by one record per parameter — name, shape,
//! raw little-endian values. Values are written in store insertion order so
//! the file is byte-deterministic for a given store.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FGCP";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct CheckpointHeader {
    pub precision_bytes: u8,
    pub seed: u64,
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, seed: u64) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(T::PRECISION_BYTES);
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            v.write_le(&mut buf);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(ParamStore<T>, CheckpointHeader)> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes, path);
    if cur.take(4)? != MAGIC {
        return Err(cur.err("bad magic"));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(cur.err(format!("unsupported version {version}")));
    }
    let precision = cur.take(1)?[0];
    if precision != T::PRECISION_BYTES {
        return Err(cur.err(format!(
            "precision mismatch: file has {precision}-byte values, expected {}",
            T::PRECISION_BYTES
        )));
    }
    let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| cur.err("non-utf8 parameter name"))?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let width = T::PRECISION_BYTES as usize;
        let raw = cur.take(numel * width)?;
        let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        store.insert(name, Tensor::new(shape, data).map_err(|e| Error::Checkpoint {
            msg: e.to_string(),
        })?);
    }
    Ok((
        store,
        CheckpointHeader {
            precision_bytes: precision,
            seed,
        },
    ))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Cursor {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            msg: format!("{}: {}", self.path, msg.into()),
        }
    }
}
