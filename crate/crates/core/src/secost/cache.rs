//! Teacher predictions persisted per (stage, teacher checkpoint hash):
//! `SECO`, u32 version, u32 record count, u32 class count, then records of
//! (u32-length-prefixed UTF-8 id, class-count f32 values), little-endian.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::SecostError;
use crate::data::Dataset;
use crate::metrics::predict_dataset;
use crate::model::WelsNet;

pub const CACHE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SECO";

#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargetCache {
    pub n_classes: usize,
    pub ids: Vec<String>,
    pub values: Vec<Vec<f32>>,
}

impl SoftTargetCache {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for v in [CACHE_VERSION, self.ids.len() as u32, self.n_classes as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (id, row) in self.ids.iter().zip(&self.values) {
            buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SecostError> {
        let bad = |m: &str| SecostError::Cache(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], SecostError> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let rd = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = rd(take(4)?);
        if version != CACHE_VERSION {
            return Err(bad(&format!("version {version}")));
        }
        let n = rd(take(4)?) as usize;
        let c = rd(take(4)?) as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut values = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = rd(take(4)?) as usize;
            let id = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("id not UTF-8"))?;
            let row = take(c.checked_mul(4).ok_or_else(|| bad("size"))?)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            ids.push(id);
            values.push(row);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { n_classes: c, ids, values })
    }
}

/// Cache location for the soft targets of `stage` from the given teacher.
pub fn cache_path(dir: &Path, stage: usize, teacher_hash: &str) -> PathBuf {
    dir.join(format!("soft_stage{stage}_{teacher_hash}.seco"))
}

/// Soft targets plus how many recordings had to be run through the teacher
/// (0 on a cache hit).
#[derive(Debug, Clone)]
pub struct SoftTargets {
    pub values: Vec<Vec<f32>>,
    pub computed: usize,
    pub path: PathBuf,
}

/// Teacher predictions for every clip of `ds`, read from the cache when a
/// file for this (stage, teacher hash) exists and covers exactly these ids.
pub fn infer_soft_targets(
    teacher: &WelsNet<f32>,
    teacher_hash: &str,
    stage: usize,
    ds: &Dataset,
    cache_dir: &Path,
    frames: usize,
    batch_size: usize,
) -> Result<SoftTargets, SecostError> {
    let path = cache_path(cache_dir, stage, teacher_hash);
    if let Ok(bytes) = fs::read(&path) {
        match SoftTargetCache::decode(&bytes) {
            Ok(c) if c.n_classes == teacher.n_classes() && c.ids.iter().eq(ds.clips.iter().map(|c| &c.id)) => {
                return Ok(SoftTargets {
                    values: c.values,
                    computed: 0,
                    path,
                });
            }
            Ok(_) => log::warn!("{}: cache does not match dataset, recomputing", path.display()),
            Err(e) => log::warn!("{}: {e}, recomputing", path.display()),
        }
    }
    let values = predict_dataset(teacher, ds, frames, batch_size)?;
    let cache = SoftTargetCache {
        n_classes: teacher.n_classes(),
        ids: ds.clips.iter().map(|c| c.id.clone()).collect(),
        values,
    };
    fs::create_dir_all(cache_dir)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&cache.encode())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(SoftTargets {
        computed: cache.ids.len(),
        values: cache.values,
        path,
    })
}
