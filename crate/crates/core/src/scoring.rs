//! Calibrated scoring rules.
//!
//! Every rule maps the probabilities gathered for one example to a
//! [`ScoreVector`] whose arg-max is the calibrated prediction:
//!
//! | method   | score for label y                                          |
//! |----------|------------------------------------------------------------|
//! | original | p(y\|x_p,x_h)                                              |
//! | cc       | p(y\|x_p,x_h) / p_cf(y), renormalized (w = diag(p_cf)^-1, b = 0) |
//! | dcpmi    | log(p(y\|x_p,x_h) / p(y\|x_domain))                        |
//! | dc       | p(y\|x_p,x_h) / mean_k p(y\|rand_k), renormalized          |
//! | bc       | p(y\|x_p,x_h) / mean_j p(y\|x_p^j,x_h^j), renormalized     |
//! | tc       | p(y\|x_p,x_h) · log(p(y\|x_p,x_h)² / (p(y\|x_p)·p(y\|x_h))) |
//!
//! A composed method (`bc+tc` and friends) first runs the inner baseline on
//! each of the three input streams and then applies the TC rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{clamp_probs, ProbTriple, ProbVector, ScoreVector, DEFAULT_EPS};

/// Baselines that can be composed with TC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Cc,
    Dcpmi,
    Dc,
    Bc,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Cc, Baseline::Dcpmi, Baseline::Dc, Baseline::Bc];

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Cc => "cc",
            Baseline::Dcpmi => "dcpmi",
            Baseline::Dc => "dc",
            Baseline::Bc => "bc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Original,
    Cc,
    Dcpmi,
    Dc,
    Bc,
    Tc,
    /// Inner baseline applied per stream, followed by TC.
    Composed(Baseline),
}

impl Method {
    pub fn baseline(self) -> Option<Baseline> {
        match self {
            Method::Cc => Some(Baseline::Cc),
            Method::Dcpmi => Some(Baseline::Dcpmi),
            Method::Dc => Some(Baseline::Dc),
            Method::Bc => Some(Baseline::Bc),
            Method::Composed(b) => Some(b),
            Method::Original | Method::Tc => None,
        }
    }

    /// Whether the method consumes the premise-only and hypothesis-only
    /// streams.
    pub fn uses_single_component(self) -> bool {
        matches!(self, Method::Tc | Method::Composed(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Original => f.write_str("original"),
            Method::Cc => f.write_str("cc"),
            Method::Dcpmi => f.write_str("dcpmi"),
            Method::Dc => f.write_str("dc"),
            Method::Bc => f.write_str("bc"),
            Method::Tc => f.write_str("tc"),
            Method::Composed(b) => write!(f, "{}+tc", b.as_str()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let method = match s.as_str() {
            "original" => Method::Original,
            "cc" => Method::Cc,
            "dcpmi" => Method::Dcpmi,
            "dc" => Method::Dc,
            "bc" => Method::Bc,
            "tc" => Method::Tc,
            other => {
                let inner = other
                    .strip_suffix("+tc")
                    .and_then(|b| Baseline::ALL.into_iter().find(|x| x.as_str() == b));
                match inner {
                    Some(b) => Method::Composed(b),
                    None => return Err(Error::Config(format!("unknown method `{other}`"))),
                }
            }
        };
        Ok(method)
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Auxiliary distributions for one input stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Auxiliary {
    pub cc_content_free: Option<Vec<ProbVector>>,
    pub dcpmi_domain: Option<ProbVector>,
    pub dc_random: Option<Vec<ProbVector>>,
    pub bc_prior: Option<ProbVector>,
}

impl Auxiliary {
    /// Uniform auxiliaries for every baseline; each baseline then reduces to
    /// the identity (up to renormalization).
    pub fn uniform(c: usize) -> Self {
        Auxiliary {
            cc_content_free: Some(vec![ProbVector::uniform(c)]),
            dcpmi_domain: Some(ProbVector::uniform(c)),
            dc_random: Some(vec![ProbVector::uniform(c)]),
            bc_prior: Some(ProbVector::uniform(c)),
        }
    }

    fn require(&self, baseline: Baseline, stream: &str) -> Result<()> {
        let present = match baseline {
            Baseline::Cc => self.cc_content_free.as_ref().is_some_and(|v| !v.is_empty()),
            Baseline::Dcpmi => self.dcpmi_domain.is_some(),
            Baseline::Dc => self.dc_random.as_ref().is_some_and(|v| !v.is_empty()),
            Baseline::Bc => self.bc_prior.is_some(),
        };
        if present {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{} requires auxiliary distributions for the {stream} stream",
                baseline.as_str()
            )))
        }
    }
}

/// A method plus whatever auxiliary distributions it needs.
///
/// Plain baselines read `joint`; composed methods read all three streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub joint: Auxiliary,
    pub premise_only: Auxiliary,
    pub hypothesis_only: Auxiliary,
    pub eps: f64,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            joint: Auxiliary::default(),
            premise_only: Auxiliary::default(),
            hypothesis_only: Auxiliary::default(),
            eps: DEFAULT_EPS,
        }
    }

    pub fn with_joint(mut self, aux: Auxiliary) -> Self {
        self.joint = aux;
        self
    }

    pub fn with_streams(mut self, joint: Auxiliary, premise_only: Auxiliary, hypothesis_only: Auxiliary) -> Self {
        self.joint = joint;
        self.premise_only = premise_only;
        self.hypothesis_only = hypothesis_only;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::Original | Method::Tc => Ok(()),
            Method::Cc | Method::Dcpmi | Method::Dc | Method::Bc => {
                self.joint.require(self.method.baseline().unwrap(), "joint")
            }
            Method::Composed(b) => {
                self.joint.require(b, "joint")?;
                self.premise_only.require(b, "premise-only")?;
                self.hypothesis_only.require(b, "hypothesis-only")
            }
        }
    }

    pub fn score(&self, triple: &ProbTriple) -> Result<ScoreVector> {
        self.validate()?;
        let eps = self.eps;
        match self.method {
            Method::Original => Ok(score_original(triple)),
            Method::Tc => Ok(score_tc_eps(triple, eps)),
            Method::Cc => score_cc_eps(&triple.joint, cc_aux(&self.joint)?, eps),
            Method::Dcpmi => score_dcpmi_eps(&triple.joint, dcpmi_aux(&self.joint)?, eps),
            Method::Dc => score_dc_eps(&triple.joint, dc_aux(&self.joint)?, eps),
            Method::Bc => score_bc_eps(&triple.joint, bc_aux(&self.joint)?, eps),
            Method::Composed(_) => score_composed(triple, self),
        }
    }
}

fn cc_aux(aux: &Auxiliary) -> Result<&[ProbVector]> {
    aux.cc_content_free
        .as_deref()
        .ok_or_else(|| Error::Config("cc requires content-free distributions".into()))
}

fn dcpmi_aux(aux: &Auxiliary) -> Result<&ProbVector> {
    aux.dcpmi_domain
        .as_ref()
        .ok_or_else(|| Error::Config("dcpmi requires a domain distribution".into()))
}

fn dc_aux(aux: &Auxiliary) -> Result<&[ProbVector]> {
    aux.dc_random
        .as_deref()
        .ok_or_else(|| Error::Config("dc requires random-text distributions".into()))
}

fn bc_aux(aux: &Auxiliary) -> Result<&ProbVector> {
    aux.bc_prior
        .as_ref()
        .ok_or_else(|| Error::Config("bc requires a batch prior".into()))
}

pub fn score_original(triple: &ProbTriple) -> ScoreVector {
    ScoreVector::from(&triple.joint)
}

/// Entrywise `p / prior` over clamped inputs, renormalized.
fn ratio_normalized(p: &ProbVector, prior: &ProbVector, eps: f64) -> Result<ProbVector> {
    prior.ensure_len(p.len())?;
    let p = clamp_probs(p, eps);
    let prior = clamp_probs(prior, eps);
    let ratios: Vec<f64> = p
        .values()
        .iter()
        .zip(prior.values())
        .map(|(a, b)| a / b)
        .collect();
    ProbVector::normalize(&ratios)
}

fn as_scores(p: ProbVector) -> ScoreVector {
    ScoreVector::from(&p)
}

pub fn score_cc(p: &ProbVector, content_free: &[ProbVector]) -> Result<ScoreVector> {
    score_cc_eps(p, content_free, DEFAULT_EPS)
}

fn score_cc_eps(p: &ProbVector, content_free: &[ProbVector], eps: f64) -> Result<ScoreVector> {
    cc_calibrate(p, content_free, eps).map(as_scores)
}

fn cc_calibrate(p: &ProbVector, content_free: &[ProbVector], eps: f64) -> Result<ProbVector> {
    if content_free.is_empty() {
        return Err(Error::Config("cc needs at least one content-free distribution".into()));
    }
    let p_cf = ProbVector::mean(content_free)?;
    ratio_normalized(p, &p_cf, eps)
}

/// Log-ratio against the domain-string distribution. Argmax-equivalent to
/// the plain ratio.
pub fn score_dcpmi(p: &ProbVector, domain: &ProbVector) -> Result<ScoreVector> {
    score_dcpmi_eps(p, domain, DEFAULT_EPS)
}

fn score_dcpmi_eps(p: &ProbVector, domain: &ProbVector, eps: f64) -> Result<ScoreVector> {
    domain.ensure_len(p.len())?;
    let p = clamp_probs(p, eps);
    let d = clamp_probs(domain, eps);
    ScoreVector::new(
        p.values()
            .iter()
            .zip(d.values())
            .map(|(a, b)| a.ln() - b.ln())
            .collect(),
    )
}

pub fn score_dc(p: &ProbVector, random_probs: &[ProbVector]) -> Result<ScoreVector> {
    score_dc_eps(p, random_probs, DEFAULT_EPS)
}

fn score_dc_eps(p: &ProbVector, random_probs: &[ProbVector], eps: f64) -> Result<ScoreVector> {
    dc_calibrate(p, random_probs, eps).map(as_scores)
}

fn dc_calibrate(p: &ProbVector, random_probs: &[ProbVector], eps: f64) -> Result<ProbVector> {
    if random_probs.is_empty() {
        return Err(Error::Config("dc needs at least one random-text distribution".into()));
    }
    let prior = ProbVector::mean(random_probs)?;
    ratio_normalized(p, &prior, eps)
}

/// Mean output distribution over the whole batch.
pub fn estimate_bc_prior(batch: &[ProbVector]) -> Result<ProbVector> {
    ProbVector::mean(batch)
}

pub fn score_bc(p: &ProbVector, prior: &ProbVector) -> Result<ScoreVector> {
    score_bc_eps(p, prior, DEFAULT_EPS)
}

fn score_bc_eps(p: &ProbVector, prior: &ProbVector, eps: f64) -> Result<ScoreVector> {
    ratio_normalized(p, prior, eps).map(as_scores)
}

/// `joint_y · log(joint_y² / (premise_y · hypothesis_y))` over clamped inputs.
pub fn score_tc(triple: &ProbTriple) -> ScoreVector {
    score_tc_eps(triple, DEFAULT_EPS)
}

pub fn score_tc_eps(triple: &ProbTriple, eps: f64) -> ScoreVector {
    let t = triple.clamped(eps);
    let scores = t
        .joint
        .values()
        .iter()
        .zip(t.premise_only.values())
        .zip(t.hypothesis_only.values())
        // premise and hypothesis enter only through their sum of logs, so
        // swapping them is exact.
        .map(|((&j, &p), &h)| j * (2.0 * j.ln() - (p.ln() + h.ln())))
        .collect();
    ScoreVector(scores)
}

fn calibrate_stream(baseline: Baseline, p: &ProbVector, aux: &Auxiliary, eps: f64) -> Result<ProbVector> {
    match baseline {
        Baseline::Cc => cc_calibrate(p, cc_aux(aux)?, eps),
        Baseline::Dcpmi => ratio_normalized(p, dcpmi_aux(aux)?, eps),
        Baseline::Dc => dc_calibrate(p, dc_aux(aux)?, eps),
        Baseline::Bc => ratio_normalized(p, bc_aux(aux)?, eps),
    }
}

/// Runs the inner baseline on each stream independently, then TC on the
/// calibrated triple.
pub fn score_composed(triple: &ProbTriple, config: &MethodConfig) -> Result<ScoreVector> {
    let Method::Composed(baseline) = config.method else {
        return Err(Error::Config(format!(
            "score_composed called with method `{}`",
            config.method
        )));
    };
    config.validate()?;
    let eps = config.eps;
    let calibrated = ProbTriple::new(
        calibrate_stream(baseline, &triple.joint, &config.joint, eps)?,
        calibrate_stream(baseline, &triple.premise_only, &config.premise_only, eps)?,
        calibrate_stream(baseline, &triple.hypothesis_only, &config.hypothesis_only, eps)?,
    )?;
    Ok(score_tc_eps(&calibrated, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::argmax_index;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn triple(j: &[f64], p: &[f64], h: &[f64]) -> ProbTriple {
        ProbTriple::new(pv(j), pv(p), pv(h)).unwrap()
    }

    fn top(s: &ScoreVector) -> (usize, bool) {
        argmax_index(s.values()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn original_is_identity() {
        let t = triple(&[0.6, 0.4], &[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(score_original(&t).values(), &[0.6, 0.4]);
        let third = 1.0 / 3.0;
        let t = triple(&[third; 3], &[third; 3], &[third; 3]);
        assert_eq!(top(&score_original(&t)), (0, true));
        let t = triple(&[0.1, 0.7, 0.2], &[third; 3], &[third; 3]);
        assert_eq!(top(&score_original(&t)).0, 1);
    }

    #[test]
    fn cc_examples() {
        let s = score_cc(&pv(&[0.7, 0.3]), &[pv(&[0.875, 0.125])]).unwrap();
        close(s.values(), &[0.25, 0.75], 1e-12);
        assert_eq!(top(&s).0, 1);

        let s = score_cc(&pv(&[0.7, 0.3]), &[pv(&[0.5, 0.5])]).unwrap();
        close(s.values(), &[0.7, 0.3], 1e-12);

        let s = score_cc(&pv(&[0.5, 0.5]), &[pv(&[0.9, 0.1])]).unwrap();
        assert_eq!(top(&s).0, 1);
    }

    #[test]
    fn cc_averages_content_free_inputs() {
        let s = score_cc(&pv(&[0.5, 0.5]), &[pv(&[0.9, 0.1]), pv(&[0.7, 0.3])]).unwrap();
        // p_cf = (0.8, 0.2) -> ratios (0.625, 2.5)
        close(s.values(), &[0.2, 0.8], 1e-12);
        assert!(matches!(score_cc(&pv(&[0.5, 0.5]), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn dcpmi_examples() {
        let s = score_dcpmi(&pv(&[0.6, 0.4]), &pv(&[0.75, 0.25])).unwrap();
        close(s.values(), &[0.8f64.ln(), 1.6f64.ln()], 1e-12);
        assert_eq!(top(&s).0, 1);

        let s = score_dcpmi(&pv(&[0.3, 0.7]), &pv(&[0.5, 0.5])).unwrap();
        assert_eq!(top(&s).0, 1);

        let s = score_dcpmi(&pv(&[0.3, 0.7]), &pv(&[0.3, 0.7])).unwrap();
        close(s.values(), &[0.0, 0.0], 1e-15);
        assert_eq!(top(&s), (0, true));
    }

    #[test]
    fn dc_examples() {
        let s = score_dc(&pv(&[0.3, 0.7]), &[pv(&[0.5, 0.5])]).unwrap();
        close(s.values(), &[0.3, 0.7], 1e-12);

        let s = score_dc(&pv(&[0.5, 0.5]), &[pv(&[0.9, 0.1]), pv(&[0.7, 0.3])]).unwrap();
        close(s.values(), &[0.2, 0.8], 1e-12);
        assert_eq!(top(&s).0, 1);

        let s = score_dc(&pv(&[0.4, 0.6]), &[pv(&[0.4, 0.6])]).unwrap();
        assert_eq!(top(&s), (0, true));
    }

    #[test]
    fn bc_prior_examples() {
        let prior = estimate_bc_prior(&[pv(&[0.9, 0.1]), pv(&[0.5, 0.5])]).unwrap();
        close(prior.values(), &[0.7, 0.3], 1e-12);
        let v = pv(&[0.2, 0.3, 0.5]);
        let prior = estimate_bc_prior(&[v.clone(), v.clone(), v.clone()]).unwrap();
        close(prior.values(), v.values(), 1e-12);
        let prior = estimate_bc_prior(&[pv(&[1.0, 0.0]), pv(&[0.0, 1.0])]).unwrap();
        assert_eq!(prior.values(), &[0.5, 0.5]);
        assert!(matches!(estimate_bc_prior(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn bc_examples() {
        let s = score_bc(&pv(&[0.9, 0.1]), &pv(&[0.7, 0.3])).unwrap();
        assert_eq!(top(&s).0, 0);
        let r = [0.9 / 0.7, 0.1 / 0.3];
        let z = r[0] + r[1];
        close(s.values(), &[r[0] / z, r[1] / z], 1e-12);

        let s = score_bc(&pv(&[0.5, 0.5]), &pv(&[0.7, 0.3])).unwrap();
        assert_eq!(top(&s).0, 1);

        let s = score_bc(&pv(&[0.9, 0.1]), &pv(&[0.5, 0.5])).unwrap();
        close(s.values(), &[0.9, 0.1], 1e-12);
    }

    #[test]
    fn tc_examples() {
        let s = score_tc(&triple(&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]));
        close(s.values(), &[0.0, 0.0], 1e-15);
        assert_eq!(top(&s), (0, true));

        let s = score_tc(&triple(&[0.6, 0.4], &[0.8, 0.2], &[0.8, 0.2]));
        close(s.values(), &[-0.345_218_486_942_137_1, 0.554_517_744_447_956_2], 1e-12);
        assert_eq!(top(&s).0, 1);

        // The joint argmax is 1; TC flips it to 0.
        let s = score_tc(&triple(&[0.4, 0.6], &[0.5, 0.5], &[0.1, 0.9]));
        close(s.values(), &[0.465_260_323_922_272_35, -0.133_886_130_788_525_9], 1e-12);
        assert_eq!(top(&s).0, 0);
    }

    #[test]
    fn tc_is_finite_on_degenerate_inputs() {
        let s = score_tc(&triple(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]));
        assert!(s.values().iter().all(|v| v.is_finite()));
        assert_eq!(top(&s).0, 0);
    }

    #[test]
    fn composed_examples() {
        let t = triple(&[0.4, 0.6], &[0.5, 0.5], &[0.1, 0.9]);

        let cfg = MethodConfig::new(Method::Composed(Baseline::Cc)).with_streams(
            Auxiliary::uniform(2),
            Auxiliary::uniform(2),
            Auxiliary::uniform(2),
        );
        close(cfg.score(&t).unwrap().values(), score_tc(&t).values(), 1e-12);

        let own = |p: &ProbVector| Auxiliary {
            bc_prior: Some(p.clone()),
            ..Auxiliary::default()
        };
        let cfg = MethodConfig::new(Method::Composed(Baseline::Bc)).with_streams(
            own(&t.joint),
            own(&t.premise_only),
            own(&t.hypothesis_only),
        );
        let s = cfg.score(&t).unwrap();
        close(s.values(), &[0.0, 0.0], 1e-12);
        assert_eq!(top(&s).0, 0);

        let cfg = MethodConfig::new(Method::Composed(Baseline::Dcpmi)).with_streams(
            Auxiliary::uniform(2),
            Auxiliary::uniform(2),
            Auxiliary::uniform(2),
        );
        close(cfg.score(&t).unwrap().values(), score_tc(&t).values(), 1e-12);
    }

    #[test]
    fn composed_missing_auxiliary_is_config_error() {
        let t = triple(&[0.4, 0.6], &[0.5, 0.5], &[0.1, 0.9]);
        let cfg = MethodConfig::new(Method::Composed(Baseline::Bc)).with_joint(Auxiliary::uniform(2));
        assert!(matches!(cfg.score(&t), Err(Error::Config(_))));
        let cfg = MethodConfig::new(Method::Dcpmi);
        assert!(matches!(cfg.score(&t), Err(Error::Config(_))));
        let cfg = MethodConfig::new(Method::Tc);
        assert!(matches!(score_composed(&t, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for name in ["original", "cc", "dcpmi", "dc", "bc", "tc", "cc+tc", "dcpmi+tc", "dc+tc", "bc+tc"] {
            let m: Method = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("tc+tc".parse::<Method>().is_err());
        assert!("platt".parse::<Method>().is_err());
    }
}
