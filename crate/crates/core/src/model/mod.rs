//! WELS-Net: four conv blocks, a 3×2 segment layer, two 1×1 layers and a
//! sigmoid segment classifier, pooled over segments into recording-level
//! probabilities.

mod checkpoint;

pub use checkpoint::{checkpoint_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use std::hash::Hasher;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::LogMelSpec;
use crate::nn::gradcheck::Differentiable;
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, global_max_pool, global_max_pool_backward, BatchNorm2d, Conv2d,
    Layer, Mode, NnError, Param, Pool2d, PoolKind, Scalar, Sequential, Tensor,
};

/// Filter counts of B1–B4, L1, L2, L3 at full width.
pub const FULL_WIDTHS: [usize; 7] = [64, 128, 256, 512, 2048, 1024, 1024];
pub const INPUT_MELS: usize = 64;
/// Smallest input that survives the pooling chain and the L1 kernel.
pub const MIN_FRAMES: usize = 96;
/// Time downsampling between input frames and L1 rows.
pub const SEGMENT_STRIDE_FRAMES: usize = 32;
pub const SEGMENT_FRAMES: usize = 96;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input has {frames} frames, need at least {min}")]
    InputTooShort { frames: usize, min: usize },
    #[error("input shape: {0}")]
    InputShape(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RecordingPool {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelsConfig {
    pub n_classes: usize,
    pub width_multiplier: f64,
    #[serde(default)]
    pub recording_pool: RecordingPool,
    /// Pooling inside B1–B4.
    #[serde(default = "default_block_pool")]
    pub block_pool: PoolKind,
}

fn default_block_pool() -> PoolKind {
    PoolKind::Max
}

impl Default for WelsConfig {
    fn default() -> Self {
        Self {
            n_classes: 527,
            width_multiplier: 0.125,
            recording_pool: RecordingPool::Mean,
            block_pool: PoolKind::Max,
        }
    }
}

impl WelsConfig {
    pub fn new(n_classes: usize, width_multiplier: f64) -> Self {
        Self {
            n_classes,
            width_multiplier,
            ..Self::default()
        }
    }

    /// Scaled filter counts of B1–B4, L1, L2, L3.
    pub fn widths(&self) -> Result<[usize; 7], ModelError> {
        if self.n_classes == 0 {
            return Err(ModelError::InvalidConfig("n_classes must be >= 1".into()));
        }
        let m = self.width_multiplier;
        if !(m.is_finite() && m > 0.0) {
            return Err(ModelError::InvalidConfig(format!("width_multiplier {m} must be > 0")));
        }
        let mut out = [0; 7];
        for (o, &f) in out.iter_mut().zip(&FULL_WIDTHS) {
            *o = (f as f64 * m).round() as usize;
            if *o == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "width_multiplier {m} scales {f} filters to zero"
                )));
            }
        }
        Ok(out)
    }
}

/// Number of segments produced for `frames` input frames, if any.
pub fn segment_count(frames: usize) -> Option<usize> {
    let t = frames / 4 / 2 / 2 / 2;
    t.checked_sub(2).filter(|&k| k >= 1)
}

/// Time span `(start_s, end_s)` of each of `k` segments for a frame hop of
/// `hop_s` seconds.
pub fn segment_intervals(k: usize, hop_s: f64) -> Vec<(f64, f64)> {
    (0..k)
        .map(|i| {
            let start = (i * SEGMENT_STRIDE_FRAMES) as f64 * hop_s;
            (start, start + SEGMENT_FRAMES as f64 * hop_s)
        })
        .collect()
}

/// Network outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct WelsOutput<T = f32> {
    /// `[N, C, K, 1]`
    pub segments: Tensor<T>,
    /// `[N, C]`
    pub recording: Tensor<T>,
}

/// Per-clip prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutput {
    /// Row-major `K × C`.
    pub probs: Vec<f32>,
    pub n_segments: usize,
    pub n_classes: usize,
    pub segment_duration_s: f64,
    pub segment_stride_s: f64,
}

impl SegmentOutput {
    pub fn segment(&self, i: usize) -> &[f32] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }
}

#[derive(Debug, Clone)]
enum HeadCache {
    Mean(Vec<usize>),
    Max(Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct WelsNet<T: Scalar = f32> {
    config: WelsConfig,
    body: Sequential<T>,
    head: Option<HeadCache>,
}

impl<T: Scalar> WelsNet<T> {
    /// Builds the network with Kaiming-uniform weights drawn from `seed`.
    pub fn build(config: &WelsConfig, seed: u64) -> Result<Self, ModelError> {
        let w = config.widths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut body = Sequential::new();
        let mut c_in = 1;
        let pool = config.block_pool;
        for (b, &f) in w[..4].iter().enumerate() {
            let blk = format!("b{}", b + 1);
            for j in 1..=2 {
                let cin = if j == 1 { c_in } else { f };
                body.push(
                    format!("{blk}.conv{j}"),
                    Layer::Conv(Conv2d::new(cin, f, (3, 3), (1, 1), (1, 1), &mut rng)),
                );
                body.push(format!("{blk}.bn{j}"), Layer::BatchNorm(BatchNorm2d::new(f)));
                body.push(format!("{blk}.relu{j}"), Layer::relu());
            }
            let p = if b == 0 { 4 } else { 2 };
            body.push(format!("{blk}.pool"), Layer::Pool(Pool2d::new(pool, (p, p), (p, p))));
            c_in = f;
        }
        let heads = [("l1", (3, 2), w[4]), ("l2", (1, 1), w[5]), ("l3", (1, 1), w[6])];
        for (name, kernel, f) in heads {
            body.push(
                format!("{name}.conv"),
                Layer::Conv(Conv2d::new(c_in, f, kernel, (1, 1), (0, 0), &mut rng)),
            );
            body.push(format!("{name}.bn"), Layer::BatchNorm(BatchNorm2d::new(f)));
            body.push(format!("{name}.relu"), Layer::relu());
            c_in = f;
        }
        body.push(
            "l4.conv",
            Layer::Conv(Conv2d::new(c_in, config.n_classes, (1, 1), (1, 1), (0, 0), &mut rng)),
        );
        body.push("l4.sigmoid", Layer::sigmoid());
        Ok(Self {
            config: config.clone(),
            body,
            head: None,
        })
    }

    pub fn config(&self) -> &WelsConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn body(&self) -> &Sequential<T> {
        &self.body
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), ModelError> {
        let [_, c, frames, mels] = x.dims4().map_err(|e| ModelError::InputShape(e.to_string()))?;
        if c != 1 || mels != INPUT_MELS {
            return Err(ModelError::InputShape(format!(
                "expected [N, 1, T, {INPUT_MELS}], got {:?}",
                x.shape()
            )));
        }
        if frames < MIN_FRAMES {
            return Err(ModelError::InputTooShort {
                frames,
                min: MIN_FRAMES,
            });
        }
        Ok(())
    }

    fn pool_segments(&self, seg: &Tensor<T>) -> Result<(Tensor<T>, HeadCache), ModelError> {
        let shape = seg.shape().to_vec();
        Ok(match self.config.recording_pool {
            RecordingPool::Mean => (global_avg_pool(seg)?, HeadCache::Mean(shape)),
            RecordingPool::Max => {
                let (out, winners) = global_max_pool(seg)?;
                (out, HeadCache::Max(shape, winners))
            }
        })
    }

    /// Forward over `[N, 1, T, 64]`, recording what `backward` needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<WelsOutput<T>, ModelError> {
        self.check_input(x)?;
        let segments = self.body.forward(x, mode)?;
        let (recording, cache) = self.pool_segments(&segments)?;
        self.head = Some(cache);
        Ok(WelsOutput { segments, recording })
    }

    /// Eval-mode forward without touching any state; safe to share.
    pub fn infer(&self, x: &Tensor<T>) -> Result<WelsOutput<T>, ModelError> {
        self.check_input(x)?;
        let segments = self.body.infer(x)?;
        let (recording, _) = self.pool_segments(&segments)?;
        Ok(WelsOutput { segments, recording })
    }

    /// Backpropagates a gradient on the recording output `[N, C]`, accumulating
    /// parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad_recording: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let g = match self.head.take().ok_or(NnError::GraphNotRecorded)? {
            HeadCache::Mean(shape) => global_avg_pool_backward(&shape, grad_recording)?,
            HeadCache::Max(shape, winners) => global_max_pool_backward(&shape, &winners, grad_recording)?,
        };
        Ok(self.body.backward(&g)?)
    }

    pub fn zero_grad(&mut self) {
        self.body.zero_grad();
    }

    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        self.body.named_params()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.body.named_params_mut()
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.body.named_buffers()
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.body.named_buffers_mut()
    }

    pub fn param_count(&self) -> usize {
        self.body.param_count()
    }

    /// Same weights and statistics in another precision.
    pub fn cast<U: Scalar>(&self) -> WelsNet<U> {
        let mut out = WelsNet::<U>::build(&self.config, 0).expect("config already validated");
        for ((_, dst), (_, src)) in out.named_params_mut().into_iter().zip(self.named_params()) {
            dst.value = src.value.cast();
        }
        for ((_, dst), (_, src)) in out.named_buffers_mut().into_iter().zip(self.named_buffers()) {
            *dst = src.cast();
        }
        out
    }
}

impl WelsNet<f32> {
    /// Segment and recording probabilities for one clip.
    pub fn predict(&self, spec: &LogMelSpec) -> Result<(SegmentOutput, Vec<f32>), ModelError> {
        let x = Tensor::new(vec![1, 1, spec.frames(), spec.n_mels()], spec.values().to_vec())?;
        let out = self.infer(&x)?;
        let c = self.n_classes();
        let k = out.segments.shape()[2];
        let mut probs = vec![0.0; k * c];
        for cls in 0..c {
            for s in 0..k {
                probs[s * c + cls] = out.segments.data()[cls * k + s];
            }
        }
        let hop_s = 1.0 / spec.frame_rate();
        Ok((
            SegmentOutput {
                probs,
                n_segments: k,
                n_classes: c,
                segment_duration_s: SEGMENT_FRAMES as f64 * hop_s,
                segment_stride_s: SEGMENT_STRIDE_FRAMES as f64 * hop_s,
            },
            out.recording.into_data(),
        ))
    }
}

impl Differentiable for WelsNet<f64> {
    fn forward_train(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>, NnError> {
        self.forward(x, mode)
            .map(|o| o.recording)
            .map_err(|e| match e {
                ModelError::Nn(e) => e,
                other => NnError::ShapeMismatch(other.to_string()),
            })
    }

    fn backward_from(&mut self, grad: &Tensor<f64>) -> Result<Tensor<f64>, NnError> {
        self.backward(grad).map_err(|e| match e {
            ModelError::Nn(e) => e,
            other => NnError::ShapeMismatch(other.to_string()),
        })
    }

    fn params_for_check(&mut self) -> Vec<(String, &mut Param<f64>)> {
        self.named_params_mut()
    }

    fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        h.write_u64(self.body.kink_signature());
        if let Some(HeadCache::Max(_, winners)) = &self.head {
            for &w in winners {
                h.write_usize(w);
            }
        }
        h.finish()
    }
}
