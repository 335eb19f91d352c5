use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Accuracy and per-class precision / recall / F1. A class that is never
/// predicted has precision 1 if it also never occurs, else 0; recall is
/// treated symmetrically.
pub fn classification_metrics(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<ClassificationReport> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} outside {n_classes} classes",
                p.max(t)
            )));
        }
        cm[t][p] += 1;
    }
    let correct: u64 = (0..n_classes).map(|c| cm[c][c]).sum();
    let accuracy = correct as f64 / pred.len() as f64;
    let mut precision = Vec::with_capacity(n_classes);
    let mut recall = Vec::with_capacity(n_classes);
    let mut f1 = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let tp = cm[c][c] as f64;
        let predicted: u64 = (0..n_classes).map(|t| cm[t][c]).sum();
        let actual: u64 = cm[c].iter().sum();
        let pr = match (predicted, actual) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => tp / predicted as f64,
        };
        let rc = match (actual, predicted) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => tp / actual as f64,
        };
        precision.push(pr);
        recall.push(rc);
        f1.push(if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 });
    }
    Ok(ClassificationReport {
        accuracy,
        precision,
        recall,
        f1,
        confusion: cm,
    })
}
