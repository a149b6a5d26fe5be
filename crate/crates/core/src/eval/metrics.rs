use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroF1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
        }
    }

    /// Percentage in `[0, 100]`.
    pub fn compute(self, gold: &[usize], predicted: &[usize], num_labels: usize) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(gold, predicted),
            Metric::MacroF1 => macro_f1(gold, predicted, num_labels),
        }
    }
}

fn check(gold: &[usize], predicted: &[usize]) -> Result<()> {
    if gold.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: predicted.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

pub fn accuracy(gold: &[usize], predicted: &[usize]) -> Result<f64> {
    check(gold, predicted)?;
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    Ok(100.0 * correct as f64 / gold.len() as f64)
}

/// Unweighted mean of per-class F1 over all `num_labels` classes. A class
/// with no true positives contributes 0, including one absent from both
/// gold and predictions.
pub fn macro_f1(gold: &[usize], predicted: &[usize], num_labels: usize) -> Result<f64> {
    check(gold, predicted)?;
    if let Some(&bad) = gold.iter().chain(predicted).find(|&&l| l >= num_labels) {
        return Err(Error::InvalidDimension(format!(
            "label {bad} outside {num_labels} classes"
        )));
    }
    let mut tp = vec![0usize; num_labels];
    let mut fp = vec![0usize; num_labels];
    let mut fn_ = vec![0usize; num_labels];
    for (&g, &p) in gold.iter().zip(predicted) {
        if g == p {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let total: f64 = (0..num_labels)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(100.0 * total / num_labels as f64)
}
