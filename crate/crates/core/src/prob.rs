//! Probability vectors over a fixed label space and the arg-max selector
//! shared by every scoring rule.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Method;

/// Floor applied before any log or division.
pub const DEFAULT_EPS: f64 = 1e-12;

/// Largest floor accepted by [`clamp_probs`].
pub const MAX_EPS: f64 = 1e-6;

const SUM_TOLERANCE: f64 = 1e-9;

/// Ordered labels with one continuation string (verbalizer) each.
///
/// The position of a label is its index everywhere else in the crate, and
/// the lowest index wins arg-max ties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace", into = "RawLabelSpace")]
pub struct LabelSpace {
    labels: Vec<String>,
    verbalizers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawLabelSpace {
    labels: Vec<String>,
    verbalizers: Vec<String>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = Error;

    fn try_from(raw: RawLabelSpace) -> Result<Self> {
        LabelSpace::new(raw.labels, raw.verbalizers)
    }
}

impl From<LabelSpace> for RawLabelSpace {
    fn from(space: LabelSpace) -> Self {
        RawLabelSpace {
            labels: space.labels,
            verbalizers: space.verbalizers,
        }
    }
}

impl LabelSpace {
    pub fn new(labels: Vec<String>, verbalizers: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        if labels.len() != verbalizers.len() {
            return Err(Error::LabelSpace(format!(
                "{} labels but {} verbalizers",
                labels.len(),
                verbalizers.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::LabelSpace(format!("duplicate label `{label}`")));
            }
        }
        let mut seen = HashSet::new();
        for verbalizer in &verbalizers {
            if verbalizer.trim().is_empty() {
                return Err(Error::LabelSpace("empty verbalizer".into()));
            }
            if !seen.insert(verbalizer.as_str()) {
                return Err(Error::LabelSpace(format!(
                    "duplicate verbalizer `{verbalizer}`"
                )));
            }
        }
        Ok(Self {
            labels,
            verbalizers,
        })
    }

    /// Label space whose identifiers are the verbalizers themselves.
    pub fn from_verbalizers<S: AsRef<str>>(verbalizers: &[S]) -> Result<Self> {
        let v: Vec<String> = verbalizers.iter().map(|s| s.as_ref().to_string()).collect();
        Self::new(v.clone(), v)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn verbalizers(&self) -> &[String] {
        &self.verbalizers
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// The string scored as a continuation of the prompt: the verbalizer
    /// preceded by a single space.
    pub fn continuation(&self, index: usize) -> String {
        format!(" {}", self.verbalizers[index])
    }

    pub fn continuations(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.continuation(i)).collect()
    }
}

/// A normalized distribution over C labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl ProbVector {
    /// Validates entries in `[0, 1]` summing to one within 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension("empty probability vector".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidProbability(format!(
                    "entry {i} = {v} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    /// Divides non-negative weights by their total.
    pub fn normalize(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDimension("empty weight vector".into()));
        }
        if let Some((i, &w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidProbability(format!(
                "weight {i} = {w} is negative or non-finite"
            )));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidProbability(format!(
                "weights sum to {total}"
            )));
        }
        Ok(Self(weights.iter().map(|w| w / total).collect()))
    }

    pub fn uniform(c: usize) -> Self {
        assert!(c > 0, "uniform distribution needs at least one label");
        Self(vec![1.0 / c as f64; c])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn ensure_len(&self, c: usize) -> Result<()> {
        if self.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Entrywise arithmetic mean of equally sized vectors, renormalized.
    pub fn mean(vectors: &[ProbVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyBatch)?;
        let c = first.len();
        let mut acc = vec![0.0; c];
        for v in vectors {
            v.ensure_len(c)?;
            for (a, x) in acc.iter_mut().zip(v.values()) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Self::normalize(&acc)
    }
}

/// The three distributions queried per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbTriple {
    pub joint: ProbVector,
    pub premise_only: ProbVector,
    pub hypothesis_only: ProbVector,
}

impl ProbTriple {
    pub fn new(
        joint: ProbVector,
        premise_only: ProbVector,
        hypothesis_only: ProbVector,
    ) -> Result<Self> {
        let c = joint.len();
        premise_only.ensure_len(c)?;
        hypothesis_only.ensure_len(c)?;
        Ok(Self {
            joint,
            premise_only,
            hypothesis_only,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.joint.len()
    }

    pub fn clamped(&self, eps: f64) -> Self {
        Self {
            joint: clamp_probs(&self.joint, eps),
            premise_only: clamp_probs(&self.premise_only, eps),
            hypothesis_only: clamp_probs(&self.hypothesis_only, eps),
        }
    }
}

/// Pre-argmax calibrated scores; entries may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub(crate) Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDimension(format!(
                "score {i} is not finite ({v})"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&ProbVector> for ScoreVector {
    fn from(p: &ProbVector) -> Self {
        ScoreVector(p.values().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_index: usize,
    pub scores: ScoreVector,
    pub method: Method,
    pub tie_broken: bool,
}

/// Exp-normalizes summed continuation log-probabilities into a distribution.
pub fn softmax_from_logprobs(logprobs: &[f64]) -> Result<ProbVector> {
    if logprobs.is_empty() {
        return Err(Error::InvalidDimension("no logprobs".into()));
    }
    if let Some((index, &value)) = logprobs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidLogprob { index, value });
    }
    let max = logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logprobs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(ProbVector(weights.into_iter().map(|w| w / total).collect()))
}

/// Lowest index among the maximizers; `tie_broken` is set when more than one
/// index attains the maximum.
pub fn argmax_with_ties(scores: ScoreVector, method: Method) -> Result<Prediction> {
    let (label_index, tie_broken) = argmax_index(scores.values())?;
    Ok(Prediction {
        label_index,
        scores,
        method,
        tie_broken,
    })
}

pub(crate) fn argmax_index(values: &[f64]) -> Result<(usize, bool)> {
    let mut best = 0;
    let mut ties = 0;
    let first = *values
        .first()
        .ok_or_else(|| Error::InvalidDimension("empty score vector".into()))?;
    let mut best_value = first;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best_value {
            best = i;
            best_value = v;
            ties = 0;
        } else if v == best_value {
            ties += 1;
        }
    }
    Ok((best, ties > 0))
}

/// Raises every entry to at least `eps` and renormalizes.
///
/// Entries at or above the floor keep their ratios; entries below it are
/// pinned to exactly `eps`. The result is a fixed point, so a second
/// application only reshuffles rounding error.
///
/// Panics if `eps` is outside `(0, 1e-6]`.
pub fn clamp_probs(p: &ProbVector, eps: f64) -> ProbVector {
    assert!(
        eps > 0.0 && eps <= MAX_EPS,
        "probability floor {eps} outside (0, {MAX_EPS}]"
    );
    let values = p.values();
    let c = values.len();
    let mut pinned = vec![false; c];
    loop {
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let free_mass: f64 = values
            .iter()
            .zip(&pinned)
            .filter(|(_, &pin)| !pin)
            .map(|(v, _)| v)
            .sum();
        let scale = (1.0 - n_pinned as f64 * eps) / free_mass;
        let mut changed = false;
        for i in 0..c {
            if !pinned[i] && values[i] * scale < eps {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            let out = values
                .iter()
                .zip(&pinned)
                .map(|(&v, &pin)| if pin { eps } else { v * scale })
                .collect();
            return ProbVector(out);
        }
    }
}
