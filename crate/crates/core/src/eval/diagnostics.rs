use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{argmax_index, LabelSpace, ProbTriple};
use crate::prompting::Example;
use crate::scoring::Method;

/// How often single-component queries land on the negative label, and how
/// often the joint query's mistakes agree with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDiagnostics {
    pub negative_label_index: usize,
    pub negative_label: String,
    pub n_examples: usize,
    pub premise_only_negative_pct: f64,
    pub hypothesis_only_negative_pct: f64,
    pub joint_errors: usize,
    /// Absent when the joint query makes no errors.
    pub premise_alignment_pct: Option<f64>,
    pub hypothesis_alignment_pct: Option<f64>,
}

pub fn bias_diagnostics(
    examples: &[Example],
    triples: &[ProbTriple],
    label_space: &LabelSpace,
    negative_label_index: usize,
) -> Result<BiasDiagnostics> {
    if negative_label_index >= label_space.len() {
        return Err(Error::InvalidDimension(format!(
            "negative label index {negative_label_index} outside {} labels",
            label_space.len()
        )));
    }
    if examples.len() != triples.len() {
        return Err(Error::DimensionMismatch {
            expected: examples.len(),
            actual: triples.len(),
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut premise_neg = 0;
    let mut hypothesis_neg = 0;
    let mut errors = 0;
    let mut premise_aligned = 0;
    let mut hypothesis_aligned = 0;
    for (i, (ex, t)) in examples.iter().zip(triples).enumerate() {
        let joint = argmax_index(t.joint.values())?.0;
        let premise = argmax_index(t.premise_only.values())?.0;
        let hypothesis = argmax_index(t.hypothesis_only.values())?.0;
        premise_neg += usize::from(premise == negative_label_index);
        hypothesis_neg += usize::from(hypothesis == negative_label_index);
        let gold = ex
            .gold_label
            .ok_or_else(|| Error::EmptyInput(format!("example {i} has no gold label")))?;
        if joint != gold {
            errors += 1;
            premise_aligned += usize::from(joint == premise);
            hypothesis_aligned += usize::from(joint == hypothesis);
        }
    }
    let n = examples.len() as f64;
    let of_errors = |k: usize| (errors > 0).then(|| 100.0 * k as f64 / errors as f64);
    Ok(BiasDiagnostics {
        negative_label_index,
        negative_label: label_space.labels()[negative_label_index].clone(),
        n_examples: examples.len(),
        premise_only_negative_pct: 100.0 * premise_neg as f64 / n,
        hypothesis_only_negative_pct: 100.0 * hypothesis_neg as f64 / n,
        joint_errors: errors,
        premise_alignment_pct: of_errors(premise_aligned),
        hypothesis_alignment_pct: of_errors(hypothesis_aligned),
    })
}

/// Paired comparison of a calibrated method against the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipAccounting {
    pub method: Method,
    pub original_errors: usize,
    /// Original wrong, method right.
    pub corrected: usize,
    /// Original wrong, method wrong with a different label.
    pub changed_but_wrong: usize,
    /// Original right, method wrong.
    pub newly_broken: usize,
    pub corrected_pct: Option<f64>,
    pub broken_pct: Option<f64>,
}

pub fn flip_accounting(method: Method, gold: &[usize], original: &[usize], calibrated: &[usize]) -> Result<FlipAccounting> {
    if gold.len() != original.len() || gold.len() != calibrated.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            actual: original.len().min(calibrated.len()),
        });
    }
    let mut acc = FlipAccounting {
        method,
        original_errors: 0,
        corrected: 0,
        changed_but_wrong: 0,
        newly_broken: 0,
        corrected_pct: None,
        broken_pct: None,
    };
    for ((&g, &o), &c) in gold.iter().zip(original).zip(calibrated) {
        if o != g {
            acc.original_errors += 1;
            if c == g {
                acc.corrected += 1;
            } else if c != o {
                acc.changed_but_wrong += 1;
            }
        } else if c != g {
            acc.newly_broken += 1;
        }
    }
    if acc.original_errors > 0 {
        let e = acc.original_errors as f64;
        acc.corrected_pct = Some(100.0 * acc.corrected as f64 / e);
        acc.broken_pct = Some(100.0 * acc.changed_but_wrong as f64 / e);
    }
    Ok(acc)
}
