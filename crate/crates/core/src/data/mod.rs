//! Manifests, in-memory datasets, batching, and the synthetic corpus.

mod batch;
mod featurize;
mod manifest;
mod synth;

pub use batch::{crop_or_pad, make_batches, Batch, BatchMode};
pub use featurize::{featurize_entries, FeaturizeSummary};
pub use manifest::{load_manifest, parse_manifest, write_manifest, RecordingEntry};
pub use synth::{class_names, read_class_names, synth_clip, synth_corpus, ClipEvents, EventLog, SynthConfig, SynthSummary};

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::{read_lmel_file, DspError, LogMelSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("duplicate id on line {0}")]
    DuplicateId(usize),
    #[error("line {line}: label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { line: usize, label: usize, n_classes: usize },
    #[error("no features for recording `{0}`")]
    MissingFeature(String),
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("{id}: {source}")]
    Features { id: String, source: DspError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Deterministic 64-bit seed from a base seed and any number of tags.
pub fn derive_seed(base: u64, tags: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for t in tags {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// A recording with its features and (possibly noisy) weak labels.
#[derive(Debug, Clone)]
pub struct Clip {
    pub id: String,
    pub spec: LogMelSpec,
    pub labels: Vec<usize>,
}

impl Clip {
    pub fn multi_hot(&self, n_classes: usize) -> Vec<f32> {
        let mut y = vec![0.0; n_classes];
        for &l in &self.labels {
            y[l] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Multi-hot ground truth per clip.
    pub fn targets(&self) -> Vec<Vec<f32>> {
        self.clips.iter().map(|c| c.multi_hot(self.n_classes())).collect()
    }

    pub fn label_matrix(&self) -> Vec<Vec<bool>> {
        self.targets()
            .into_iter()
            .map(|r| r.into_iter().map(|v| v > 0.5).collect())
            .collect()
    }

    /// Loads every entry's feature file. Entries without one fail with
    /// `MissingFeature`.
    pub fn load(entries: &[RecordingEntry], class_names: &[String]) -> Result<Self, DataError> {
        let clips = entries
            .iter()
            .map(|e| {
                let path = e.feat.as_ref().ok_or_else(|| DataError::MissingFeature(e.id.clone()))?;
                if !path.exists() {
                    return Err(DataError::MissingFeature(e.id.clone()));
                }
                let spec = read_lmel_file(path).map_err(|source| DataError::Features {
                    id: e.id.clone(),
                    source,
                })?;
                Ok(Clip {
                    id: e.id.clone(),
                    spec,
                    labels: e.labels.clone(),
                })
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Self {
            class_names: class_names.to_vec(),
            clips,
        })
    }

    pub fn load_manifest(manifest: &Path, class_names: &[String]) -> Result<Self, DataError> {
        let entries = load_manifest(manifest, Some(class_names.len()))?;
        Self::load(&entries, class_names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_tags() {
        let a = derive_seed(1, &[b"ab", b"c"]);
        let b = derive_seed(1, &[b"a", b"bc"]);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(1, &[b"ab", b"c"]));
        assert_ne!(a, derive_seed(2, &[b"ab", b"c"]));
    }
}
