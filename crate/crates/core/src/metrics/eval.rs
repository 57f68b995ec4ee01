use rayon::prelude::*;

use super::{EvalReport, MetricError};
use crate::data::{make_batches, BatchMode, DataError, Dataset};
use crate::model::{ModelError, WelsNet};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Recording-level probabilities for every clip, in dataset order. Inputs
/// are center-cropped or padded to `frames`. Batches run in parallel; each
/// is independent, so results do not depend on the thread count.
pub fn predict_dataset(
    model: &WelsNet<f32>,
    ds: &Dataset,
    frames: usize,
    batch_size: usize,
) -> Result<Vec<Vec<f32>>, EvalError> {
    let dummy = vec![Vec::new(); ds.len()];
    let batches = make_batches(&ds.clips, &dummy, batch_size, frames, BatchMode::Eval, 0)?;
    let per_batch = batches
        .par_iter()
        .map(|b| {
            let out = model.infer(&b.inputs)?;
            let c = model.n_classes();
            Ok(out.recording.data().chunks_exact(c).map(<[f32]>::to_vec).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

pub fn evaluate(model: &WelsNet<f32>, ds: &Dataset, frames: usize, batch_size: usize) -> Result<EvalReport, EvalError> {
    if ds.is_empty() {
        return Err(MetricError::EmptyDataset.into());
    }
    let scores = predict_dataset(model, ds, frames, batch_size)?;
    Ok(EvalReport::from_scores(&ds.class_names, &scores, &ds.label_matrix())?)
}
