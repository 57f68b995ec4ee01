use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{average_precision, roc_auc, MetricError};

/// Relative AP change counted as a clear improvement / degradation.
pub const IMPROVED_THRESHOLD: f64 = 0.20;
pub const DEGRADED_THRESHOLD: f64 = 0.10;

/// Per-class AP/AUC over recording-level scores. Classes without positives
/// (or, for AUC, without negatives) get `None` and are left out of the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub ap: Vec<Option<f64>>,
    pub auc: Vec<Option<f64>>,
    pub positives: Vec<usize>,
    pub map: f64,
    pub mauc: f64,
    pub n_eval: usize,
}

#[derive(Serialize, Deserialize)]
struct ClassLine {
    class: usize,
    name: String,
    ap: Option<f64>,
    auc: Option<f64>,
    positives: usize,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: bool,
    map: f64,
    mauc: f64,
    n_eval: usize,
    n_classes: usize,
    n_ap_classes: usize,
    n_auc_classes: usize,
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        f64::NAN
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

impl EvalReport {
    /// `scores[i][c]` and `labels[i][c]` for recording `i`, class `c`.
    pub fn from_scores(
        class_names: &[String],
        scores: &[Vec<f32>],
        labels: &[Vec<bool>],
    ) -> Result<Self, MetricError> {
        if scores.is_empty() {
            return Err(MetricError::EmptyDataset);
        }
        let c = class_names.len();
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        for (s, l) in scores.iter().zip(labels) {
            if s.len() != c || l.len() != c {
                return Err(MetricError::LengthMismatch {
                    scores: s.len(),
                    labels: l.len(),
                });
            }
        }
        let mut ap = Vec::with_capacity(c);
        let mut auc = Vec::with_capacity(c);
        let mut positives = Vec::with_capacity(c);
        for k in 0..c {
            let s: Vec<f64> = scores.iter().map(|r| r[k] as f64).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[k]).collect();
            positives.push(l.iter().filter(|&&x| x).count());
            ap.push(average_precision(&s, &l).ok());
            auc.push(roc_auc(&s, &l).ok());
        }
        Ok(Self {
            class_names: class_names.to_vec(),
            map: mean_defined(&ap),
            mauc: mean_defined(&auc),
            ap,
            auc,
            positives,
            n_eval: scores.len(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Classes left out of the means for lack of positives.
    pub fn excluded_classes(&self) -> Vec<usize> {
        (0..self.n_classes()).filter(|&k| self.ap[k].is_none()).collect()
    }

    /// One JSON object per class, then a summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for k in 0..self.n_classes() {
            let line = ClassLine {
                class: k,
                name: self.class_names[k].clone(),
                ap: self.ap[k],
                auc: self.auc[k],
                positives: self.positives[k],
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
        let summary = SummaryLine {
            summary: true,
            map: self.map,
            mauc: self.mauc,
            n_eval: self.n_eval,
            n_classes: self.n_classes(),
            n_ap_classes: self.ap.iter().flatten().count(),
            n_auc_classes: self.auc.iter().flatten().count(),
        };
        out.push_str(&serde_json::to_string(&summary).expect("serializable"));
        out.push('\n');
        out
    }
}

/// Parses what [`EvalReport::to_jsonl`] writes.
pub fn read_report_jsonl(text: &str) -> Result<EvalReport, MetricError> {
    let mut classes: Vec<ClassLine> = Vec::new();
    let mut summary: Option<SummaryLine> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| MetricError::Format(format!("line {}: {e}", i + 1)))?;
        if v.get("summary").is_some() {
            summary = Some(serde_json::from_value(v).map_err(|e| MetricError::Format(e.to_string()))?);
        } else {
            classes.push(serde_json::from_value(v).map_err(|e| MetricError::Format(format!("line {}: {e}", i + 1)))?);
        }
    }
    let summary = summary.ok_or_else(|| MetricError::Format("missing summary line".into()))?;
    for (k, c) in classes.iter().enumerate() {
        if c.class != k {
            return Err(MetricError::Format(format!("class rows out of order at {k}")));
        }
    }
    Ok(EvalReport {
        class_names: classes.iter().map(|c| c.name.clone()).collect(),
        ap: classes.iter().map(|c| c.ap).collect(),
        auc: classes.iter().map(|c| c.auc).collect(),
        positives: classes.iter().map(|c| c.positives).collect(),
        // JSON has no NaN; serde writes it as null which fails to parse into
        // f64, so undefined means never reach this point.
        map: summary.map,
        mauc: summary.mauc,
        n_eval: summary.n_eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementBin {
    pub lo: f64,
    pub hi: f64,
    pub n_classes: usize,
    pub base_mean_ap: Option<f64>,
    pub new_mean_ap: Option<f64>,
    /// `(new − base) / base` in percent.
    pub rel_improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: usize,
    pub name: String,
    pub base_ap: f64,
    pub new_ap: f64,
    pub rel_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementBins {
    pub bins: Vec<ImprovementBin>,
    pub deltas: Vec<ClassDelta>,
    pub improved_over_20pct: usize,
    pub degraded_over_10pct: usize,
}

/// Bins classes by their base AP into tenths and compares mean AP per bin.
/// A class stays in its base bin regardless of where its new AP lands.
/// Classes without an AP in either report are skipped.
pub fn improvement_analysis(base: &EvalReport, new: &EvalReport) -> Result<ImprovementBins, MetricError> {
    if base.class_names != new.class_names {
        return Err(MetricError::ClassSetMismatch(format!(
            "{} vs {} classes",
            base.n_classes(),
            new.n_classes()
        )));
    }
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 10];
    let mut deltas = Vec::new();
    for k in 0..base.n_classes() {
        let (Some(b), Some(n)) = (base.ap[k], new.ap[k]) else {
            continue;
        };
        let bin = ((b * 10.0).floor() as usize).min(9);
        members[bin].push((b, n));
        deltas.push(ClassDelta {
            class: k,
            name: base.class_names[k].clone(),
            base_ap: b,
            new_ap: n,
            rel_change: (b > 0.0).then(|| (n - b) / b),
        });
    }
    let bins = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mean = |f: fn(&(f64, f64)) -> f64| (!m.is_empty()).then(|| m.iter().map(f).sum::<f64>() / m.len() as f64);
            let base_mean = mean(|p| p.0);
            let new_mean = mean(|p| p.1);
            ImprovementBin {
                lo: i as f64 / 10.0,
                hi: (i + 1) as f64 / 10.0,
                n_classes: m.len(),
                base_mean_ap: base_mean,
                new_mean_ap: new_mean,
                rel_improvement_pct: match (base_mean, new_mean) {
                    (Some(b), Some(n)) if b > 0.0 => Some(100.0 * (n - b) / b),
                    _ => None,
                },
            }
        })
        .collect();
    let improved = deltas
        .iter()
        .filter(|d| d.rel_change.is_some_and(|r| r > IMPROVED_THRESHOLD))
        .count();
    let degraded = deltas
        .iter()
        .filter(|d| d.rel_change.is_some_and(|r| r < -DEGRADED_THRESHOLD))
        .count();
    Ok(ImprovementBins {
        bins,
        deltas,
        improved_over_20pct: improved,
        degraded_over_10pct: degraded,
    })
}

impl ImprovementBins {
    /// Plain-text bar chart of per-bin relative improvement.
    pub fn histogram(&self) -> String {
        let mut out = String::from("# base AP bin   classes   rel. improvement (%)\n");
        for b in &self.bins {
            let pct = b.rel_improvement_pct;
            let bar = match pct {
                Some(p) if p >= 0.0 => "+".repeat((p.round() as usize).min(60)),
                Some(p) => "-".repeat(((-p).round() as usize).min(60)),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "[{:.1}, {:.1})  {:>7}   {:>8}  {bar}",
                b.lo,
                b.hi,
                b.n_classes,
                pct.map_or("n/a".to_string(), |p| format!("{p:+.1}")),
            );
        }
        let _ = writeln!(
            out,
            "# classes improved >{:.0}%: {}   degraded >{:.0}%: {}",
            IMPROVED_THRESHOLD * 100.0,
            self.improved_over_20pct,
            DEGRADED_THRESHOLD * 100.0,
            self.degraded_over_10pct
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn report(aps: &[Option<f64>]) -> EvalReport {
        EvalReport {
            class_names: names(aps.len()),
            ap: aps.to_vec(),
            auc: aps.to_vec(),
            positives: vec![1; aps.len()],
            map: mean_defined(aps),
            mauc: mean_defined(aps),
            n_eval: 10,
        }
    }

    #[test]
    fn ground_truth_scores_give_unit_map() {
        let labels = vec![vec![true, false, false], vec![false, true, false], vec![true, true, false]];
        let scores: Vec<Vec<f32>> = labels.iter().map(|r| r.iter().map(|&b| b as u8 as f32).collect()).collect();
        let rep = EvalReport::from_scores(&names(3), &scores, &labels).unwrap();
        assert_eq!(rep.map, 1.0);
        assert_eq!(rep.ap.len(), 3);
        assert_eq!(rep.excluded_classes(), vec![2]);
        assert_eq!(rep.positives, vec![2, 2, 0]);
    }

    #[test]
    fn constant_model_ap_is_tie_order_dependent() {
        // four clips, one class, positives at 0 and 2; all scores tie
        let labels = vec![vec![true], vec![false], vec![true], vec![false]];
        let scores = vec![vec![0.3f32]; 4];
        let rep = EvalReport::from_scores(&names(1), &scores, &labels).unwrap();
        assert!((rep.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(rep.mauc, 0.5);
    }

    #[test]
    fn empty_dataset() {
        assert_eq!(EvalReport::from_scores(&names(2), &[], &[]), Err(MetricError::EmptyDataset));
    }

    #[test]
    fn jsonl_round_trip() {
        let rep = report(&[Some(0.5), None, Some(0.25)]);
        let text = rep.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_report_jsonl(&text).unwrap(), rep);
    }

    #[test]
    fn self_comparison_is_flat() {
        let rep = report(&[Some(0.05), Some(0.5), Some(1.0), Some(0.55)]);
        let bins = improvement_analysis(&rep, &rep).unwrap();
        assert_eq!(bins.bins.iter().map(|b| b.n_classes).sum::<usize>(), 4);
        assert!(bins.bins.iter().flat_map(|b| b.rel_improvement_pct).all(|p| p == 0.0));
        assert_eq!(bins.bins[9].n_classes, 1);
        assert_eq!(bins.bins[5].n_classes, 2);
        assert_eq!((bins.improved_over_20pct, bins.degraded_over_10pct), (0, 0));
    }

    #[test]
    fn singleton_bin_relative_gain() {
        let base = report(&[Some(0.10), Some(0.8)]);
        let new = report(&[Some(0.128), Some(0.6)]);
        let bins = improvement_analysis(&base, &new).unwrap();
        assert!((bins.bins[1].rel_improvement_pct.unwrap() - 28.0).abs() < 1e-9);
        // class 1 fell to 0.6 but is still counted in its base bin
        assert_eq!(bins.bins[8].n_classes, 1);
        assert_eq!(bins.bins[6].n_classes, 0);
        assert_eq!((bins.improved_over_20pct, bins.degraded_over_10pct), (1, 1));
        assert!(bins.histogram().contains("+28.0"));
    }

    #[test]
    fn mismatched_classes() {
        assert!(matches!(
            improvement_analysis(&report(&[Some(0.1)]), &report(&[Some(0.1), Some(0.2)])),
            Err(MetricError::ClassSetMismatch(_))
        ));
    }
}
