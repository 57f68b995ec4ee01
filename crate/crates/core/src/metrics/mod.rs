//! Ranking metrics for multi-label tagging and the per-class improvement
//! analysis between two evaluations.

mod eval;
mod report;

pub use eval::{evaluate, predict_dataset, EvalError};
pub use report::{
    improvement_analysis, read_report_jsonl, ClassDelta, EvalReport, ImprovementBin, ImprovementBins,
    DEGRADED_THRESHOLD, IMPROVED_THRESHOLD,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no positive labels")]
    NoPositives,
    #[error("need at least one positive and one negative label")]
    DegenerateLabels,
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("class sets differ: {0}")]
    ClassSetMismatch(String),
    #[error("report format: {0}")]
    Format(String),
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Non-interpolated average precision: rank by descending score (equal
/// scores keep their input order) and average the precision at the rank of
/// every positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Area under the ROC curve as the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the pair count, so ties stay integral.
    let mut twice = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k]).count() as u64;
        let neg = group.len() as u64 - pos;
        twice += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Precision at every positive, by explicit rank construction. Terms
    /// are summed best rank first so the float result is comparable bit for bit.
    fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let mut terms = Vec::new();
        for i in (0..n).filter(|&i| labels[i]) {
            // items strictly ahead: higher score, or equal score earlier
            let ahead: Vec<usize> = (0..n)
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .collect();
            let pos_ahead = ahead.iter().filter(|&&j| labels[j]).count();
            terms.push((ahead.len(), (pos_ahead + 1) as f64 / (ahead.len() + 1) as f64));
        }
        terms.sort_by_key(|t| t.0);
        terms.iter().map(|t| t.1).fold(0.0, |a, b| a + b) / terms.len() as f64
    }

    fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn worked_example() {
        let s = [0.9, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        assert!((average_precision(&s, &l).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(roc_auc(&s, &l).unwrap(), 0.75);
    }

    #[test]
    fn perfect_and_tied() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        assert_eq!(average_precision(&s, &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&s, &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &l).unwrap(), 0.5);
        // one positive in position 2 of 4 equal scores: precision 1/3
        let l = [false, false, true, false];
        assert!((average_precision(&[0.5; 4], &l).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(average_precision(&[0.1], &[false]), Err(MetricError::NoPositives));
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(MetricError::DegenerateLabels));
        assert!(matches!(roc_auc(&[0.1], &[true, false]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn exhaustive_small_sets_match_oracles() {
        let alphabet = [0.1, 0.4, 0.4 + 1e-9, 0.9];
        for n in 1..=6usize {
            let total = 4usize.pow(n as u32);
            for code in 0..total {
                let scores: Vec<f64> = (0..n).map(|i| alphabet[(code / 4usize.pow(i as u32)) % 4]).collect();
                for mask in 0..(1u32 << n) {
                    let labels: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                    if mask != 0 {
                        assert_eq!(average_precision(&scores, &labels).unwrap(), ap_oracle(&scores, &labels));
                    }
                    if mask != 0 && mask != (1 << n) - 1 {
                        assert_eq!(roc_auc(&scores, &labels).unwrap(), auc_oracle(&scores, &labels));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            if labels.iter().any(|&l| l) {
                prop_assert_eq!(average_precision(&scores, &labels), average_precision(&warped, &labels));
            }
            if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
                prop_assert_eq!(roc_auc(&scores, &labels), roc_auc(&warped, &labels));
            }
        }

        #[test]
        fn auc_complement(
            raw in proptest::collection::btree_map(0u32..10_000, any::<bool>(), 2..40)
        ) {
            let scores: Vec<f64> = raw.keys().map(|&k| k as f64).collect();
            let labels: Vec<bool> = raw.values().copied().collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
