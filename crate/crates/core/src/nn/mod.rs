//! Dense f32/f64 tensor core: the layers the WELS-Net stack needs, their
//! backward passes, and Adam.
//!
//! There is no general autodiff. Each [`Layer`] records what its own
//! backward pass needs during `forward`, and [`Sequential`] replays the
//! stack in reverse. Matrix products go through `matrixmultiply`; all other
//! reductions accumulate in f64.

mod activation;
mod adam;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod layer;
mod pool;
mod scalar;
mod tensor;

pub use activation::{relu, sigmoid};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{batchnorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv::{conv2d, conv2d_backward, conv_out_len, ConvGrads};
pub use layer::{BatchNorm2d, Conv2d, Layer, Param, Pool2d, Sequential};
pub use pool::{global_avg_pool, global_avg_pool_backward, pool2d, PoolKind};
pub use pool::{global_max_pool, global_max_pool_backward};
pub use scalar::Scalar;
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a recorded forward pass")]
    GraphNotRecorded,
    #[error("non-finite value produced by layer `{0}`")]
    NonFinite(String),
}
