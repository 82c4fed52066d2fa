//! Confusion-matrix scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy plus macro-averaged precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores a confusion matrix (rows: true class, columns: predicted class).
/// Undefined ratios (0/0) count as 0. Per-class F1 is the harmonic mean of
/// that class's precision and recall.
pub fn score(confusion: &[Vec<usize>]) -> Result<Metrics> {
    let k = confusion.len();
    if k == 0 {
        return Err(Error::InvalidArgument("empty confusion matrix".into()));
    }
    if confusion.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument("confusion matrix is not square".into()));
    }
    let total: usize = confusion.iter().flatten().sum();
    let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassScore> = (0..k)
        .map(|c| {
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let actual: usize = confusion[c].iter().sum();
            let precision = ratio(confusion[c][c], predicted);
            let recall = ratio(confusion[c][c], actual);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScore { precision, recall, f1 }
        })
        .collect();
    let mean = |f: fn(&ClassScore) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(Metrics {
        accuracy: ratio(trace, total),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_class,
    })
}
