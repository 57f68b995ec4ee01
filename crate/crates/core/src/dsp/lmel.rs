//! Flat binary feature record: magic `LMEL`, u32 version, u32 frames,
//! u32 n_mels, then `frames * n_mels` little-endian f32, row-major by frame.

use std::fs;
use std::path::Path;

use super::{DspError, LogMelSpec, DEFAULT_HOP_MS};

pub const LMEL_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LMEL";
const HEADER_LEN: usize = 16;

pub fn write_lmel(spec: &LogMelSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * spec.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&LMEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_mels() as u32).to_le_bytes());
    for v in spec.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_lmel(bytes: &[u8]) -> Result<LogMelSpec, DspError> {
    if bytes.len() < HEADER_LEN {
        return Err(DspError::FeatureFormat("truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(DspError::FeatureFormat("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != LMEL_VERSION {
        return Err(DspError::FeatureVersion {
            found: version,
            expected: LMEL_VERSION,
        });
    }
    let frames = word(8) as usize;
    let n_mels = word(12) as usize;
    let expected = frames
        .checked_mul(n_mels)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DspError::FeatureFormat("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(DspError::FeatureFormat(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LogMelSpec::new(values, frames, n_mels, 1000.0 / DEFAULT_HOP_MS)
}

pub fn write_lmel_file(path: &Path, spec: &LogMelSpec) -> Result<(), DspError> {
    let tmp = path.with_extension("lmel.tmp");
    fs::write(&tmp, write_lmel(spec))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_lmel_file(path: &Path) -> Result<LogMelSpec, DspError> {
    read_lmel(&fs::read(path)?)
}
