use serde::{Deserialize, Serialize};

use super::loss::{bce_grad, bce_loss};
use super::SecostError;
use crate::data::{make_batches, BatchMode, Dataset};
use crate::metrics::evaluate;
use crate::model::{WelsConfig, WelsNet};
use crate::nn::{adam_step, AdamConfig, AdamState, Mode, Tensor};

/// Per-model optimization budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Stop after this many epochs without a better validation mAP.
    pub patience: usize,
    pub batch_size: usize,
    /// Input length for training crops and evaluation.
    pub frames: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            max_epochs: 30,
            patience: 5,
            batch_size: 16,
            frames: 1024,
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), SecostError> {
        let bad = |m: &str| Err(SecostError::Config(m.into()));
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if self.frames < crate::model::MIN_FRAMES {
            return bad("frames below the network minimum");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation mAP.
    pub model: WelsNet<f32>,
    pub best_epoch: usize,
    pub best_val_map: f64,
    pub history: Vec<EpochLog>,
}

/// Trains a freshly built network on `targets` (one vector per training
/// clip) with mean BCE over classes and batch, and keeps the best
/// validation-mAP weights.
pub fn train_model(
    model_cfg: &WelsConfig,
    seed: u64,
    train: &Dataset,
    targets: &[Vec<f32>],
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, SecostError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SecostError::EmptyDataset);
    }
    let mut model = WelsNet::<f32>::build(model_cfg, seed)?;
    let adam = cfg.adam();
    let mut state = AdamState::new();
    let mut best: Option<(WelsNet<f32>, usize, f64)> = None;
    let mut history = Vec::new();
    let c = model.n_classes();

    for epoch in 0..cfg.max_epochs {
        let batches = make_batches(
            &train.clips,
            targets,
            cfg.batch_size,
            cfg.frames,
            BatchMode::Train { epoch: epoch as u64 },
            seed,
        )?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let b = batch.ids.len();
            model.zero_grad();
            let out = model.forward(&batch.inputs, Mode::Train)?;
            let mut grad = Vec::with_capacity(b * c);
            for (p, t) in out.recording.data().chunks_exact(c).zip(batch.targets.data().chunks_exact(c)) {
                loss_sum += bce_loss(p, t)? as f64;
                grad.extend(bce_grad(p, t)?.into_iter().map(|g| g / b as f32));
            }
            seen += b;
            model.backward(&Tensor::new(vec![b, c], grad)?)?;
            let mut params: Vec<_> = model.named_params_mut().into_iter().map(|(_, p)| p).collect();
            adam_step(&mut params, &mut state, &adam)?;
        }
        let report = evaluate(&model, val, cfg.frames, cfg.batch_size)?;
        let train_loss = loss_sum / seen as f64;
        log::info!("epoch {epoch}: loss {train_loss:.4}, val mAP {:.4}", report.map);
        history.push(EpochLog {
            epoch,
            train_loss,
            val_map: report.map,
        });
        let improved = best.as_ref().is_none_or(|(_, _, m)| report.map > *m);
        if improved {
            best = Some((model.clone(), epoch, report.map));
        } else if epoch - best.as_ref().unwrap().1 >= cfg.patience {
            break;
        }
    }
    let (model, best_epoch, best_val_map) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_map,
        history,
    })
}
