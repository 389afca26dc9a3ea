//! Confusion matrix, accuracy/precision/recall/F1 and a tie-aware ROC/AUC.
//!
//! Label 1 is the positive class and a score is predicted positive when it
//! is `>= threshold`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("no samples to evaluate")]
    EmptyMatrix,
    #[error("ROC needs both classes present")]
    OneClassOnly,
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyMatrix);
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(MetricsError::BadLabel(bad));
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(bad));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix, MetricsError> {
    check_inputs(scores, labels)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::BadThreshold(threshold));
    }
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 are 0 when their denominators vanish.
pub fn scalar_metrics(cm: &ConfusionMatrix) -> Result<ScalarMetrics, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScalarMetrics {
        accuracy: (cm.tp + cm.tn) as f64 / total as f64,
        precision,
        recall,
        f1,
    })
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one step per distinct
/// score in descending order, and the trapezoid area under them. Tied
/// scores move diagonally, which counts each tied positive/negative pair as
/// one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<(f64, f64)>), MetricsError> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one pos/neg pair, kept integral
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - fp0) * (tp + tp0)) as u128;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = twice_area as f64 / (2 * pos * neg) as f64;
    Ok((auc, points))
}

/// Scores, labels and everything derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub roc_points: Vec<(f64, f64)>,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    accuracy: f64,
    auc: Option<f64>,
    precision: f64,
    recall: f64,
    f1: f64,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    threshold: f64,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricsError> {
        let cm = confusion(scores, labels, threshold)?;
        let s = scalar_metrics(&cm)?;
        let (auc, roc_points) = match roc_auc(scores, labels) {
            Ok((a, p)) => (Some(a), p),
            Err(MetricsError::OneClassOnly) => (None, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(Self {
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            auc,
            confusion: cm,
            roc_points,
            threshold,
        })
    }

    /// Fixed keys: accuracy, auc, precision, recall, f1, tp, fp, tn, fn,
    /// threshold. A missing AUC is written as `null`.
    pub fn to_json(&self) -> String {
        let j = ReportJson {
            accuracy: self.accuracy,
            auc: self.auc,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            tp: self.confusion.tp,
            fp: self.confusion.fp,
            tn: self.confusion.tn,
            fn_: self.confusion.fn_,
            threshold: self.threshold,
        };
        serde_json::to_string_pretty(&j).expect("plain numbers serialize")
    }

    /// Parses [`MetricsReport::to_json`] output; ROC points are not stored.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let j: ReportJson = serde_json::from_str(text)?;
        Ok(Self {
            accuracy: j.accuracy,
            precision: j.precision,
            recall: j.recall,
            f1: j.f1,
            auc: j.auc,
            confusion: ConfusionMatrix {
                tp: j.tp,
                fp: j.fp,
                tn: j.tn,
                fn_: j.fn_,
            },
            roc_points: Vec::new(),
            threshold: j.threshold,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json() + "\n")
    }
}
