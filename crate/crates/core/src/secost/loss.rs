//! Target mixing and the losses built on it.
//!
//! The training objective is plain BCE against the mixed target
//! `ȳ = α·y + (1−α)·ŷ`. The decomposed forms rewrite the same quantity as
//! BCE on the down-weighted ground truth plus a teacher term in the log-odds
//! `ln((1−p)/p)`; they exist so the rewrite can be checked, not to train.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Scalar;

pub const PROB_FLOOR: f64 = 1e-7;
/// Tolerance on `Σ α_k = 1` for teacher weights.
pub const CONVEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("teacher weights are not convex: {0}")]
    WeightsNotConvex(String),
    #[error("label vector entries must be 0 or 1")]
    NotBinary,
    #[error("soft target entries must lie in [0, 1]")]
    TargetOutOfRange,
    #[error("empty vector")]
    Empty,
}

fn check_len(expected: usize, got: usize) -> Result<(), LossError> {
    if expected != got {
        return Err(LossError::LengthMismatch { expected, got });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<(), LossError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LossError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

/// Multi-hot ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelVector(Vec<f32>);

impl WeakLabelVector {
    pub fn new(y: Vec<f32>) -> Result<Self, LossError> {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(LossError::NotBinary);
        }
        Ok(Self(y))
    }

    /// Indices must be `< n_classes`; duplicates are harmless.
    pub fn from_indices(n_classes: usize, idx: &[usize]) -> Result<Self, LossError> {
        let mut y = vec![0.0; n_classes];
        for &i in idx {
            *y.get_mut(i).ok_or(LossError::LengthMismatch {
                expected: n_classes,
                got: i + 1,
            })? = 1.0;
        }
        Ok(Self(y))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Where a soft target came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TargetProvenance {
    pub alphas: Vec<f64>,
    pub teachers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTarget {
    values: Vec<f32>,
    pub provenance: TargetProvenance,
}

impl SoftTarget {
    pub fn new(values: Vec<f32>) -> Result<Self, LossError> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LossError::TargetOutOfRange);
        }
        Ok(Self {
            values,
            provenance: TargetProvenance::default(),
        })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }
}

/// Ground-truth weights `α_1..α_S`, one per co-supervised stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StageSchedule(Vec<f64>);

impl StageSchedule {
    /// An empty schedule means "base model only".
    pub fn new(alphas: Vec<f64>) -> Result<Self, LossError> {
        for &a in &alphas {
            check_alpha(a)?;
        }
        Ok(Self(alphas))
    }

    pub fn stages(&self) -> usize {
        self.0.len()
    }

    /// `α_s` for stage `s >= 1`.
    pub fn alpha(&self, stage: usize) -> Option<f64> {
        stage.checked_sub(1).and_then(|i| self.0.get(i)).copied()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for StageSchedule {
    type Error = LossError;
    fn try_from(v: Vec<f64>) -> Result<Self, LossError> {
        Self::new(v)
    }
}

impl From<StageSchedule> for Vec<f64> {
    fn from(s: StageSchedule) -> Self {
        s.0
    }
}

/// `α_0` weighs the ground truth, `α_k` teacher `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherWeights(Vec<f64>);

impl TeacherWeights {
    pub fn new(w: Vec<f64>) -> Result<Self, LossError> {
        if w.is_empty() {
            return Err(LossError::Empty);
        }
        if let Some(bad) = w.iter().find(|&&a| !(a >= 0.0 && a.is_finite())) {
            return Err(LossError::WeightsNotConvex(format!("negative or non-finite weight {bad}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > CONVEX_TOLERANCE {
            return Err(LossError::WeightsNotConvex(format!("weights sum to {sum}")));
        }
        Ok(Self(w))
    }

    /// `(α, 1 − α)`.
    pub fn single(alpha: f64) -> Result<Self, LossError> {
        check_alpha(alpha)?;
        Self::new(vec![alpha, 1.0 - alpha])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn n_teachers(&self) -> usize {
        self.0.len() - 1
    }
}

pub fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::of(PROB_FLOOR);
    let hi = T::of(1.0 - PROB_FLOOR);
    p.max(lo).min(hi)
}

fn ln_odds_against<T: Scalar>(p: T) -> T {
    let p = clamp_prob(p);
    ((T::one() - p) / p).ln()
}

fn class_bce<T: Scalar>(p: T, t: T) -> T {
    let p = clamp_prob(p);
    -(t * p.ln()) - (T::one() - t) * (T::one() - p).ln()
}

fn mean_of<T: Scalar>(terms: impl Iterator<Item = T>, n: usize) -> T {
    T::of(terms.map(|v| v.to_f64()).sum::<f64>() / n as f64)
}

/// Mean over classes of `−t·ln p − (1−t)·ln(1−p)`, with `p` clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Scalar>(p: &[T], t: &[T]) -> Result<T, LossError> {
    check_len(p.len(), t.len())?;
    if p.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(mean_of(p.iter().zip(t).map(|(&p, &t)| class_bce(p, t)), p.len()))
}

/// `∂ bce_loss / ∂p`, per class: `(p − t) / (p(1 − p)) / |C|`. Evaluated at
/// the clamped `p`, so saturated outputs still get a finite pull toward `t`.
pub fn bce_grad<T: Scalar>(p: &[T], t: &[T]) -> Result<Vec<T>, LossError> {
    check_len(p.len(), t.len())?;
    let n = T::of(p.len() as f64);
    Ok(p
        .iter()
        .zip(t)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            (p - t) / (p * (T::one() - p)) / n
        })
        .collect())
}

/// `ȳ = α·y + (1−α)·ŷ`.
pub fn mix_targets<T: Scalar>(y: &[T], y_hat: &[T], alpha: f64) -> Result<Vec<T>, LossError> {
    check_alpha(alpha)?;
    check_len(y.len(), y_hat.len())?;
    let (a, b) = (T::of(alpha), T::of(1.0 - alpha));
    Ok(y.iter().zip(y_hat).map(|(&y, &h)| a * y + b * h).collect())
}

/// `ȳ = α_0·y + Σ_k α_k·ŷ^k`.
pub fn mix_targets_multi<T: Scalar>(y: &[T], teachers: &[&[T]], w: &TeacherWeights) -> Result<Vec<T>, LossError> {
    check_len(w.n_teachers(), teachers.len())?;
    for t in teachers {
        check_len(y.len(), t.len())?;
    }
    let ws = w.weights();
    Ok((0..y.len())
        .map(|i| {
            let mut acc = T::of(ws[0]) * y[i];
            for (k, t) in teachers.iter().enumerate() {
                acc += T::of(ws[k + 1]) * t[i];
            }
            acc
        })
        .collect())
}

/// Per class `l(p, α·y) + (1−α)·ŷ·ln((1−p)/p)`, averaged.
pub fn decomposed_loss<T: Scalar>(p: &[T], y: &[T], y_hat: &[T], alpha: f64) -> Result<T, LossError> {
    check_alpha(alpha)?;
    check_len(p.len(), y.len())?;
    check_len(p.len(), y_hat.len())?;
    if p.is_empty() {
        return Err(LossError::Empty);
    }
    let (a, b) = (T::of(alpha), T::of(1.0 - alpha));
    Ok(mean_of(
        (0..p.len()).map(|i| class_bce(p[i], a * y[i]) + b * y_hat[i] * ln_odds_against(p[i])),
        p.len(),
    ))
}

/// Per class `l(p, α_0·y) + Σ_k α_k·ŷ^k·ln((1−p)/p)`, averaged.
pub fn decomposed_loss_multi<T: Scalar>(
    p: &[T],
    y: &[T],
    teachers: &[&[T]],
    w: &TeacherWeights,
) -> Result<T, LossError> {
    check_len(w.n_teachers(), teachers.len())?;
    check_len(p.len(), y.len())?;
    for t in teachers {
        check_len(p.len(), t.len())?;
    }
    if p.is_empty() {
        return Err(LossError::Empty);
    }
    let ws = w.weights();
    Ok(mean_of(
        (0..p.len()).map(|i| {
            let mut teach = T::zero();
            for (k, t) in teachers.iter().enumerate() {
                teach += T::of(ws[k + 1]) * t[i];
            }
            class_bce(p[i], T::of(ws[0]) * y[i]) + teach * ln_odds_against(p[i])
        }),
        p.len(),
    ))
}

/// What the teacher adds on top of the ground-truth loss:
/// `(1−α)·mean((ŷ − y)·ln((1−p)/p))`, so that
/// `bce_loss(p, ȳ) = bce_loss(p, y) + teacher_correction(p, y, ŷ, α)`.
/// Vanishes when the teacher reproduces the labels.
pub fn teacher_correction<T: Scalar>(p: &[T], y: &[T], y_hat: &[T], alpha: f64) -> Result<T, LossError> {
    check_alpha(alpha)?;
    check_len(p.len(), y.len())?;
    check_len(p.len(), y_hat.len())?;
    if p.is_empty() {
        return Err(LossError::Empty);
    }
    let b = T::of(1.0 - alpha);
    Ok(mean_of(
        (0..p.len()).map(|i| b * (y_hat[i] - y[i]) * ln_odds_against(p[i])),
        p.len(),
    ))
}
