//! Checkpoint file: `WELS`, u32 version, u32-length-prefixed JSON header
//! (config + training metadata), u32 record count, then records of
//! (u32 name length, name, u8 dtype, u32 rank, u32 dims…, f32 payload).
//! Everything little-endian. Loading parses the whole file before a model
//! is assembled, so a bad file never yields a partial model.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, WelsConfig, WelsNet};
use crate::nn::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"WELS";
const DTYPE_F32: u8 = 0;

/// What produced a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub stage: usize,
    /// Ground-truth weight of the target mixture; `None` for the base model.
    pub alpha: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_map: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: WelsConfig,
    meta: CheckpointMeta,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(net: &WelsNet<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let header = serde_json::to_vec(&Header {
        config: net.config().clone(),
        meta: meta.clone(),
    })
    .expect("header serializes");
    put_u32(&mut buf, header.len() as u32);
    buf.extend_from_slice(&header);

    let mut records: Vec<(String, &Tensor<f32>)> =
        net.named_params().into_iter().map(|(n, p)| (n, &p.value)).collect();
    records.extend(net.named_buffers());
    put_u32(&mut buf, records.len() as u32);
    for (name, t) in records {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        put_u32(&mut buf, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

/// Writes via a temporary sibling and rename.
pub fn save_checkpoint(net: &WelsNet<f32>, meta: &CheckpointMeta, path: &Path) -> Result<(), ModelError> {
    let bytes = encode_checkpoint(net, meta);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            ModelError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "checkpoint truncated"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(WelsNet<f32>, CheckpointMeta), ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| ModelError::Format(format!("header: {e}")))?;

    let n = r.u32()? as usize;
    let mut records: HashMap<String, Tensor<f32>> = HashMap::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| ModelError::Format("record name is not UTF-8".into()))?;
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(ModelError::Format(format!("{name}: unknown dtype {dtype}")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            ModelError::Format(format!("{name}: shape overflow"))
        })?;
        let payload = r.take(count.checked_mul(4).ok_or_else(|| ModelError::Format("size overflow".into()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data)?;
        if records.insert(name.clone(), t).is_some() {
            return Err(ModelError::Format(format!("duplicate record {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelError::Format("trailing bytes".into()));
    }

    let mut net = WelsNet::<f32>::build(&header.config, 0)?;
    let mut fill = |name: String, dst: &mut Tensor<f32>| -> Result<(), ModelError> {
        let src = records
            .remove(&name)
            .ok_or_else(|| ModelError::ShapeMismatch(format!("missing {name}")))?;
        if src.shape() != dst.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "{name}: stored {:?}, architecture {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        *dst = src;
        Ok(())
    };
    for (name, p) in net.named_params_mut() {
        fill(name, &mut p.value)?;
    }
    for (name, b) in net.named_buffers_mut() {
        fill(name, b)?;
    }
    if let Some(extra) = records.keys().next() {
        return Err(ModelError::ShapeMismatch(format!("unexpected record {extra}")));
    }
    Ok((net, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(WelsNet<f32>, CheckpointMeta), ModelError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Hex SHA-256 of a checkpoint file; identifies a teacher.
pub fn checkpoint_hash(path: &Path) -> Result<String, ModelError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
