//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "BSARECKP"
//! version    u32
//! config     u32 length + UTF-8 `key=value` lines (the full model config)
//! count      u32 number of tensors
//! tensor     u16 name length + UTF-8 name
//!            u8 dtype (0 = f64, 1 = f32)
//!            u8 rank + rank × u64 dims
//!            row-major payload
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BsaRec, ModelConfig};
use crate::error::{Error, Result};
use crate::spectral::RescalerBeta;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BSARECKP";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    Single,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &BsaRec, precision: Precision) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    let config: String = model
        .config()
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(config.as_bytes()).map_err(io)?;
    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[match precision {
            Precision::Double => 0u8,
            Precision::Single => 1u8,
        }])
        .map_err(io)?;
        w.write_all(&[t.ndim() as u8]).map_err(io)?;
        for &dim in t.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 8);
        for &v in t.iter() {
            match precision {
                Precision::Double => buf.extend_from_slice(&v.to_le_bytes()),
                Precision::Single => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))?;
        Ok(buf)
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<BsaRec> {
    let mut c = Cursor { inner: r };
    if &c.array::<8>("magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(c.array("version")?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = u32::from_le_bytes(c.array("config length")?) as usize;
    let text = String::from_utf8(c.bytes(len, "config")?)
        .map_err(|_| Error::Checkpoint("config section is not UTF-8".into()))?;
    let mut pairs = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let config = ModelConfig::from_pairs(&pairs)?;

    let count = u32::from_le_bytes(c.array("tensor count")?) as usize;
    let mut stored: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.array("name length")?) as usize;
        let name = String::from_utf8(c.bytes(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let [dtype] = c.array::<1>("dtype")?;
        let [rank] = c.array::<1>("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(c.array("dimension")?) as usize);
        }
        let len: usize = shape.iter().product();
        let values = match dtype {
            0 => c
                .bytes(len * 8, &name)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
            1 => c
                .bytes(len * 4, &name)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            other => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {other}"))),
        };
        stored.insert(name, (shape, values));
    }

    // Start from correctly shaped tensors, then overwrite every one.
    let mut params = super::BsaRecParams::init(&config, 0);
    for l in params.layers.iter_mut() {
        l.beta = RescalerBeta::filled(config.beta_mode, config.hidden, 1.0);
    }
    let mut problems = Vec::new();
    for (name, mut t) in params.tensors_mut() {
        match stored.remove(&name) {
            Some((shape, values)) if shape == t.shape() => {
                for (dst, v) in t.iter_mut().zip(values) {
                    *dst = v;
                }
            }
            Some((shape, _)) => problems.push(format!("{name}: config implies {:?}, file has {shape:?}", t.shape())),
            None => problems.push(format!("{name}: missing")),
        }
    }
    problems.extend(stored.keys().map(|k| format!("{k}: unexpected tensor")));
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!("shape mismatch: {}", problems.join("; "))));
    }
    BsaRec::new(config, params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &BsaRec, precision: Precision) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), model, precision)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BsaRec> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
