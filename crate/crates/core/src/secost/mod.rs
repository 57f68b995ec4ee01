//! Sequential co-supervision: target mixing, the loss identities behind
//! it, and the stage-by-stage teacher → student cascade.

mod cache;
mod loss;
mod run;
mod train;

pub use cache::{cache_path, infer_soft_targets, SoftTargetCache, SoftTargets, CACHE_VERSION};
pub use loss::{
    bce_grad, bce_loss, clamp_prob, decomposed_loss, decomposed_loss_multi, mix_targets, mix_targets_multi,
    teacher_correction, LossError, SoftTarget, StageSchedule, TargetProvenance, TeacherWeights, WeakLabelVector,
    CONVEX_TOLERANCE, PROB_FLOOR,
};
pub use run::{
    read_stage_report, run_secost, student_seed, RunResult, RunSettings, SecostData, StageActivity, StageRow,
    CACHE_DIR, CHECKPOINT_DIR, REPORT_FILE,
};
pub use train::{train_model, EpochLog, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::EvalError;
use crate::model::ModelError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum SecostError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("soft-target cache: {0}")]
    Cache(String),
    #[error("stage report: {0}")]
    Report(String),
    #[error("run interrupted after stage {after_stage}")]
    Interrupted { after_stage: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
