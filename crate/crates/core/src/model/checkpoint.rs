//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "C4SN" | u32 version | u32 len, config text | u32 entry count
//! per entry: u32 len, UTF-8 name | u32 rank | rank x u32 extents | u8 dtype (0 = f32) | payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! The config text holds the model configuration as `model.*=value` lines
//! followed by the training metadata as `meta.*=value` lines.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"C4SN";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Training metadata stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_f: f64,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(model: &Model<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let mut text = model.config().to_canonical_text();
    text.push_str(&format!("meta.epoch={}\nmeta.val_f={}\n", meta.epoch, meta.val_f));
    put_str(&mut buf, &text);
    let entries = model.state_tensors();
    put_u32(&mut buf, entries.len() as u32);
    for (name, t) in entries {
        put_str(&mut buf, &name);
        put_u32(&mut buf, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
        buf.push(DTYPE_F32);
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    let text = r.string("config")?;
    let count = r.u32("entry count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string("entry name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > crate::tensor::MAX_RANK {
            return Err(CheckpointError::Malformed(format!("{name}: rank {rank}")).into());
        }
        let shape = (0..rank)
            .map(|_| r.u32("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let dtype = r.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::Malformed(format!("{name}: unknown dtype code {dtype}")).into());
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, shape, data));
    }
    let body_len = r.pos;
    let stored = r.u32("crc")?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(CheckpointError::CrcMismatch { stored, computed }.into());
    }

    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Malformed(format!("config line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let meta = CheckpointMeta {
        epoch: kv
            .remove("meta.epoch")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed("missing meta.epoch".into()))?,
        val_f: kv
            .remove("meta.val_f")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed("missing meta.val_f".into()))?,
    };
    let config = ModelConfig::from_kv(&kv).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut model = Model::<f32>::build(&config, &mut crate::rng::substream(0, "checkpoint-skeleton", &[]))
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    let expected: BTreeMap<String, Vec<usize>> = model
        .state_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    for (name, shape, data) in entries {
        let want = expected
            .get(&name)
            .ok_or_else(|| CheckpointError::Malformed(format!("unexpected tensor {name}")))?;
        if *want != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                stored: shape,
                expected: want.clone(),
            }
            .into());
        }
        model.set_state_tensor(&name, Tensor::from_vec(&shape, data)?)?;
        seen.insert(name);
    }
    if let Some(missing) = expected.keys().find(|k| !seen.contains(*k)) {
        return Err(CheckpointError::MissingTensor(missing.clone()).into());
    }
    Ok((model, meta))
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
