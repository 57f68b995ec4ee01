use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Clip, DataError};
use crate::dsp::LogMelSpec;
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// Shuffled order, random crops.
    Train { epoch: u64 },
    /// Input order, centered crops.
    Eval,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// Row index of each item in the clip list.
    pub indices: Vec<usize>,
    /// `[B, 1, frames, n_mels]`
    pub inputs: Tensor<f32>,
    /// `[B, C]`
    pub targets: Tensor<f32>,
}

/// Exactly `frames` rows from `spec`, starting at `offset` after padding.
/// Shorter inputs are padded on both sides (centered) by repeating the
/// first and last rows; `offset` then indexes into the padded matrix.
pub fn crop_or_pad(spec: &LogMelSpec, frames: usize, offset: usize) -> Vec<f32> {
    let n = spec.frames();
    let m = spec.n_mels();
    let mut out = Vec::with_capacity(frames * m);
    let (pad_left, avail) = if n >= frames { (0, n) } else { ((frames - n) / 2, frames) };
    let offset = offset.min(avail - frames);
    for r in offset..offset + frames {
        let src = r.saturating_sub(pad_left).min(n - 1);
        out.extend_from_slice(spec.row(src));
    }
    out
}

fn crop_offset(n: usize, frames: usize, mode: BatchMode, seed: u64, id: &str) -> usize {
    let slack = n.saturating_sub(frames);
    match mode {
        BatchMode::Eval => slack / 2,
        BatchMode::Train { epoch } => {
            if slack == 0 {
                0
            } else {
                let s = derive_seed(seed, &[b"crop", &epoch.to_le_bytes(), id.as_bytes()]);
                ChaCha8Rng::seed_from_u64(s).gen_range(0..=slack)
            }
        }
    }
}

/// Splits `clips` into batches of `frames`-row inputs paired with
/// `targets[i]` (ground truth or mixed soft targets). Train mode shuffles
/// with a seed derived from `(seed, epoch)`; crop offsets derive from
/// `(seed, epoch, id)`, so a clip's crop does not depend on its position.
pub fn make_batches(
    clips: &[Clip],
    targets: &[Vec<f32>],
    batch_size: usize,
    frames: usize,
    mode: BatchMode,
    seed: u64,
) -> Result<Vec<Batch>, DataError> {
    if targets.len() != clips.len() {
        return Err(DataError::InvalidConfig(format!(
            "{} targets for {} clips",
            targets.len(),
            clips.len()
        )));
    }
    if batch_size == 0 || frames == 0 {
        return Err(DataError::InvalidConfig("batch size and frames must be positive".into()));
    }
    let mut order: Vec<usize> = (0..clips.len()).collect();
    if let BatchMode::Train { epoch } = mode {
        let s = derive_seed(seed, &[b"shuffle", &epoch.to_le_bytes()]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    let n_classes = targets.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mels = clips[chunk[0]].spec.n_mels();
        let mut x = Vec::with_capacity(chunk.len() * frames * mels);
        let mut t = Vec::with_capacity(chunk.len() * n_classes);
        for &i in chunk {
            let clip = &clips[i];
            if clip.spec.n_mels() != mels || clip.spec.frames() == 0 {
                return Err(DataError::MissingFeature(clip.id.clone()));
            }
            let off = crop_offset(clip.spec.frames(), frames, mode, seed, &clip.id);
            x.extend(crop_or_pad(&clip.spec, frames, off));
            if targets[i].len() != n_classes {
                return Err(DataError::InvalidConfig(format!("{}: target length", clip.id)));
            }
            t.extend_from_slice(&targets[i]);
        }
        out.push(Batch {
            ids: chunk.iter().map(|&i| clips[i].id.clone()).collect(),
            indices: chunk.to_vec(),
            inputs: Tensor::new(vec![chunk.len(), 1, frames, mels], x).expect("sized above"),
            targets: Tensor::new(vec![chunk.len(), n_classes], t).expect("sized above"),
        });
    }
    Ok(out)
}
