//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MDCK" | version u32 | n_cfg u32 | n_cfg × (key, value)
//!        | n_params u32 | n_params × (name, rank u32, rank × extent u32, f32 data)
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8 bytes. Values are stored
//! as `f32`, so an `f32` network round-trips bit-exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ModelConfig, NetworkWeights};
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"MDCK";
pub const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint<T: Scalar>(w: &NetworkWeights<T>, cfg: &ModelConfig) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * w.num_scalars());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let pairs = cfg.to_pairs();
    put_u32(&mut buf, pairs.len() as u32);
    for (k, v) in &pairs {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    put_u32(&mut buf, w.len() as u32);
    for p in w.iter() {
        put_str(&mut buf, &p.name);
        put_u32(&mut buf, p.value.rank() as u32);
        for &e in p.value.shape() {
            put_u32(&mut buf, e as u32);
        }
        for &x in p.value.data() {
            let x = x.to_f32().unwrap_or(f32::NAN);
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    w: &NetworkWeights<T>,
    cfg: &ModelConfig,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(w, cfg);
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 in string".into()))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(NetworkWeights<T>, ModelConfig)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n_cfg = r.u32()?;
    let mut pairs = Vec::new();
    for _ in 0..n_cfg {
        pairs.push((r.string()?, r.string()?));
    }
    let cfg = ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;

    let n_params = r.u32()?;
    let mut w = NetworkWeights::new();
    for _ in 0..n_params {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name}: extent overflow")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| {
            Error::Checkpoint(format!("parameter {name}: extent overflow"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        let value = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        w.insert(name, value)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameter table".into()));
    }
    w.check_layout(&cfg)?;
    Ok((w, cfg))
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(NetworkWeights<T>, ModelConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
