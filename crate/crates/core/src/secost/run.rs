use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cache::infer_soft_targets;
use super::loss::{mix_targets, StageSchedule};
use super::train::{train_model, TrainConfig};
use super::SecostError;
use crate::data::{derive_seed, Dataset};
use crate::metrics::evaluate;
use crate::model::{checkpoint_hash, load_checkpoint, save_checkpoint, CheckpointMeta, WelsConfig, WelsNet};

pub const REPORT_FILE: &str = "stage_report.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const CACHE_DIR: &str = "soft_targets";

/// One line of the stage report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    /// `None` for the base model, which sees ground truth only.
    pub alpha: Option<f64>,
    pub val_map: f64,
    pub val_mauc: f64,
    /// Relative to the run directory.
    pub checkpoint_path: String,
    pub best_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_map: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_mauc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub model: WelsConfig,
    pub train: TrainConfig,
    pub schedule: StageSchedule,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub struct SecostData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    /// Scored after every stage when present; never used for selection.
    pub eval: Option<&'a Dataset>,
}

/// What happened at each stage of this invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct StageActivity {
    pub stage: usize,
    /// False when the stage was restored from a previous run.
    pub trained: bool,
    pub soft_targets_computed: usize,
}

#[derive(Debug)]
pub struct RunResult {
    pub model: WelsNet<f32>,
    pub rows: Vec<StageRow>,
    pub activity: Vec<StageActivity>,
}

pub fn student_seed(seed: u64, stage: usize) -> u64 {
    derive_seed(seed, &[b"student", &(stage as u64).to_le_bytes()])
}

pub fn read_stage_report(path: &Path) -> Result<Vec<StageRow>, SecostError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| SecostError::Report(e.to_string())))
        .collect()
}

fn write_stage_report(path: &Path, rows: &[StageRow]) -> Result<(), SecostError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        for r in rows {
            writeln!(f, "{}", serde_json::to_string(r).expect("serializable"))?;
        }
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Restores stage `s` if both its report row and a checkpoint whose
/// metadata matches the current schedule and seed are on disk.
fn restore(
    dir: &Path,
    rows: &[StageRow],
    stage: usize,
    alpha: Option<f64>,
    seed: u64,
    model_cfg: &WelsConfig,
) -> Option<(WelsNet<f32>, StageRow)> {
    let row = rows.get(stage).filter(|r| r.stage == stage && r.alpha == alpha)?;
    let (model, meta) = load_checkpoint(&dir.join(&row.checkpoint_path)).ok()?;
    (meta.stage == stage && meta.alpha == alpha && meta.seed == seed && model.config() == model_cfg)
        .then(|| (model, row.clone()))
}

/// Base model on ground truth, then one fresh student per scheduled α
/// trained on `α·y + (1−α)·teacher(x)`, each student becoming the next
/// teacher. Every stage's best-validation checkpoint and report row is
/// persisted before the next stage starts, and a rerun in the same
/// directory resumes after the last stage it finds intact.
///
/// `after_stage` is called once a stage is persisted; returning `false`
/// stops the run with [`SecostError::Interrupted`].
pub fn run_secost(
    data: &SecostData,
    settings: &RunSettings,
    after_stage: &mut dyn FnMut(&StageRow) -> bool,
) -> Result<RunResult, SecostError> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(SecostError::EmptyDataset);
    }
    settings.train.validate()?;
    settings.model.widths()?;
    if settings.model.n_classes != data.train.n_classes() {
        return Err(SecostError::Config(format!(
            "model has {} classes, dataset {}",
            settings.model.n_classes,
            data.train.n_classes()
        )));
    }
    let dir = &settings.out_dir;
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    let report_path = dir.join(REPORT_FILE);
    let previous = read_stage_report(&report_path)?;
    let mut rows: Vec<StageRow> = Vec::new();
    let mut activity = Vec::new();
    let y = data.train.targets();
    let cfg = &settings.train;
    let mut teacher: Option<(WelsNet<f32>, PathBuf)> = None;
    let mut resuming = true;

    for stage in 0..=settings.schedule.stages() {
        let alpha = settings.schedule.alpha(stage);
        let seed = student_seed(settings.seed, stage);
        let rel_ckpt = format!("{CHECKPOINT_DIR}/stage_{stage}.wels");
        let ckpt = dir.join(&rel_ckpt);

        if resuming {
            if let Some((model, row)) = restore(dir, &previous, stage, alpha, seed, &settings.model) {
                log::info!("stage {stage}: restored from {}", ckpt.display());
                rows.push(row);
                activity.push(StageActivity {
                    stage,
                    trained: false,
                    soft_targets_computed: 0,
                });
                teacher = Some((model, ckpt));
                continue;
            }
            resuming = false;
        }

        let (targets, computed) = match (&teacher, alpha) {
            (None, _) | (_, None) => (y.clone(), 0),
            (Some((t, path)), Some(a)) => {
                let hash = checkpoint_hash(path)?;
                let soft = infer_soft_targets(
                    t,
                    &hash,
                    stage,
                    data.train,
                    &dir.join(CACHE_DIR),
                    cfg.frames,
                    cfg.batch_size,
                )?;
                let mixed = y
                    .iter()
                    .zip(&soft.values)
                    .map(|(y, s)| mix_targets(y, s, a))
                    .collect::<Result<Vec<_>, _>>()?;
                (mixed, soft.computed)
            }
        };
        log::info!("stage {stage}: training (alpha {alpha:?})");
        let out = train_model(&settings.model, seed, data.train, &targets, data.val, cfg)?;
        let val = evaluate(&out.model, data.val, cfg.frames, cfg.batch_size)?;
        let eval = data
            .eval
            .map(|e| evaluate(&out.model, e, cfg.frames, cfg.batch_size))
            .transpose()?;
        let meta = CheckpointMeta {
            stage,
            alpha,
            seed,
            epoch: Some(out.best_epoch),
            val_map: Some(val.map),
        };
        save_checkpoint(&out.model, &meta, &ckpt)?;
        let row = StageRow {
            stage,
            alpha,
            val_map: val.map,
            val_mauc: val.mauc,
            checkpoint_path: rel_ckpt,
            best_epoch: out.best_epoch,
            eval_map: eval.as_ref().map(|r| r.map),
            eval_mauc: eval.as_ref().map(|r| r.mauc),
        };
        rows.push(row.clone());
        write_stage_report(&report_path, &rows)?;
        activity.push(StageActivity {
            stage,
            trained: true,
            soft_targets_computed: computed,
        });
        teacher = Some((out.model, ckpt));
        if !after_stage(&row) {
            return Err(SecostError::Interrupted { after_stage: stage });
        }
    }
    let (model, _) = teacher.expect("stage 0 always runs");
    if rows.len() < previous.len() {
        // A longer earlier run in this directory: keep the report consistent
        // with the schedule that just ran.
        write_stage_report(&report_path, &rows)?;
    }
    Ok(RunResult { model, rows, activity })
}
