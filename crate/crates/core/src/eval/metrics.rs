use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;

/// ROC points for one class against the rest. Point `i` classifies `score ≥ thresholds[i]`
/// as positive; thresholds run from `+inf` down to `-inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    #[serde(with = "crate::inf_json")]
    pub thresholds: Vec<f64>,
}

/// Mean and standard deviation of per-sample prediction time, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl LatencyStats {
    /// Population statistics; an empty sample gives zeros.
    pub fn from_samples(t: &[f64]) -> Self {
        if t.is_empty() {
            return LatencyStats { n: 0, mean: 0.0, sd: 0.0 };
        }
        let (mean, sd) = mean_sd(t);
        LatencyStats { n: t.len(), mean, sd }
    }
}

/// Population mean and standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, math::sqrt(var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    /// Rows are true classes, columns predicted classes. Counts, or averaged counts.
    pub confusion: Vec<Vec<f64>>,
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// One-vs-rest curves; empty when no scores were given.
    pub roc: Vec<RocCurve>,
    /// `None` when a class has no positives or no negatives.
    pub auroc: Vec<Option<f64>>,
    /// Set when some rate had a zero denominator and was reported as 0.
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        *degenerate = true;
        0.0
    }
}

/// Accuracy and per-class precision, recall and F1 from a confusion matrix. Entries may
/// be fractional, as for confusion matrices averaged over folds.
pub fn metrics_from_confusion(confusion: Vec<Vec<f64>>) -> Result<MetricsReport> {
    let c = confusion.len();
    if c == 0 || confusion.iter().any(|r| r.len() != c) {
        return Err(shape_err!("confusion matrix must be square and non-empty"));
    }
    if confusion.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config("confusion entries must be finite and non-negative".into()));
    }
    let mut degenerate = false;
    let total: f64 = confusion.iter().flatten().sum();
    let diag: f64 = (0..c).map(|k| confusion[k][k]).sum();
    let accuracy = ratio(diag, total, &mut degenerate);
    let mut precision = vec![0.0; c];
    let mut recall = vec![0.0; c];
    let mut f1 = vec![0.0; c];
    for k in 0..c {
        let tp = confusion[k][k];
        let predicted: f64 = (0..c).map(|r| confusion[r][k]).sum();
        let actual: f64 = confusion[k].iter().sum();
        precision[k] = ratio(tp, predicted, &mut degenerate);
        recall[k] = ratio(tp, actual, &mut degenerate);
        f1[k] = ratio(2.0 * precision[k] * recall[k], precision[k] + recall[k], &mut degenerate);
    }
    Ok(MetricsReport {
        n_classes: c,
        confusion,
        accuracy,
        precision,
        recall,
        f1,
        roc: Vec::new(),
        auroc: Vec::new(),
        degenerate,
        latency: None,
    })
}

/// ROC curve of `scores` against binary ground truth, with a threshold at every distinct
/// score plus `±inf`.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(shape_err!("{} scores for {} labels", scores.len(), positive.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("ROC scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = positive.iter().filter(|&&p| p).count() as f64;
    let neg = scores.len() as f64 - pos;
    let rate = |k: f64, n: f64| if n > 0.0 { k / n } else { 0.0 };
    let mut curve = RocCurve { fpr: vec![0.0], tpr: vec![0.0], thresholds: vec![f64::INFINITY] };
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        curve.fpr.push(rate(fp, neg));
        curve.tpr.push(rate(tp, pos));
        curve.thresholds.push(t);
    }
    curve.fpr.push(rate(neg, neg));
    curve.tpr.push(rate(pos, pos));
    curve.thresholds.push(f64::NEG_INFINITY);
    Ok(curve)
}

/// Trapezoidal area under an ROC curve.
pub fn auroc(curve: &RocCurve) -> f64 {
    curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) * 0.5)
        .sum()
}

/// Full report from hard predictions and, optionally, per-class scores (rows summing to 1).
pub fn compute_metrics(
    truth: &[usize],
    predicted: &[usize],
    scores: Option<&[Vec<f64>]>,
    n_classes: usize,
) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(shape_err!("{} true labels but {} predictions", truth.len(), predicted.len()));
    }
    if n_classes == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    let mut confusion = vec![vec![0.0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Config(format!("label out of range for {n_classes} classes")));
        }
        confusion[t][p] += 1.0;
    }
    let mut report = metrics_from_confusion(confusion)?;
    if let Some(scores) = scores {
        if scores.len() != truth.len() {
            return Err(shape_err!("{} score rows for {} samples", scores.len(), truth.len()));
        }
        for (i, row) in scores.iter().enumerate() {
            if row.len() != n_classes {
                return Err(shape_err!("score row {i} has {} entries, expected {n_classes}", row.len()));
            }
            let s: f64 = row.iter().sum();
            if !((s - 1.0).abs() <= 1e-6) {
                return Err(Error::Numeric(format!("score row {i} sums to {s}, not 1")));
            }
        }
        for k in 0..n_classes {
            let col: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            let curve = roc_curve(&col, &pos)?;
            let has_both = pos.iter().any(|&p| p) && pos.iter().any(|&p| !p);
            if !has_both {
                report.degenerate = true;
            }
            report.auroc.push(has_both.then(|| auroc(&curve)));
            report.roc.push(curve);
        }
    }
    Ok(report)
}
