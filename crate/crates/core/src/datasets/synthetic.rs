//! Synthetic streams with a planted single-component preference bias.
//!
//! For each example a gold label `g` and an independent confound label `k`
//! are drawn uniformly. With `peaked(i)` putting `peak_mass` on label `i` and
//! spreading the rest evenly:
//!
//! ```text
//! joint           = s·peaked(g) + (1 − s)·peaked(k)
//! premise_only    = β_p·peaked(k) + (1 − β_p)·uniform
//! hypothesis_only = β_h·peaked(k) + (1 − β_h)·uniform
//! ```
//!
//! The record store holds `ln p` for every rendered prompt and candidate, so
//! the offline scorer reproduces the triples. Auxiliary prompts (content-free,
//! domain and random-text) are stored with uniform distributions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{LogprobRecord, RecordStore};
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::prob::{clamp_probs, LabelSpace, ProbTriple, ProbVector, DEFAULT_EPS};
use crate::prompting::{
    content_free_prompts_for, domain_prompt, random_text_prompts_for, render, Example, FewShotContext, Mode,
    TaskSchema, TaskType, TemplateRegistry, DC_SAMPLES,
};

pub const SYNTHETIC_MODEL_ID: &str = "synthetic";
pub const SYNTHETIC_TASK_ID: &str = "synthetic";

/// Seed used for the random-text prompts stored alongside synthetic data.
pub const SYNTHETIC_DC_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub beta_p: f64,
    pub beta_h: f64,
    pub signal: f64,
    pub peak_mass: f64,
    pub num_labels: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            beta_p: 0.0,
            beta_h: 0.9,
            signal: 0.4,
            peak_mass: 0.9,
            num_labels: 2,
            n: 10_000,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.beta_p) || !unit(self.beta_h) {
            return Err(Error::Config("bias levels must lie in [0, 1]".into()));
        }
        if !(self.signal > 0.0 && self.signal <= 1.0) {
            return Err(Error::Config("signal level must lie in (0, 1]".into()));
        }
        if self.num_labels < 2 {
            return Err(Error::Config("at least two labels are required".into()));
        }
        if !(self.peak_mass >= 1.0 / self.num_labels as f64 && self.peak_mass <= 1.0) {
            return Err(Error::Config(format!(
                "peak mass must lie in [1/{}, 1]",
                self.num_labels
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SyntheticData {
    pub config: SyntheticConfig,
    pub schema: TaskSchema,
    pub examples: Vec<Example>,
    pub confounds: Vec<usize>,
    pub triples: Vec<ProbTriple>,
    pub store: RecordStore,
}

fn peaked(c: usize, index: usize, mass: f64) -> Vec<f64> {
    let rest = (1.0 - mass) / (c - 1) as f64;
    (0..c).map(|i| if i == index { mass } else { rest }).collect()
}

fn mix(a: &[f64], b: &[f64], w: f64) -> ProbVector {
    let v: Vec<f64> = a.iter().zip(b).map(|(x, y)| w * x + (1.0 - w) * y).collect();
    ProbVector::normalize(&v).expect("mixture of distributions is a distribution")
}

/// Schema used for synthetic streams with `c` labels.
pub fn synthetic_schema(c: usize) -> TaskSchema {
    let labels: Vec<String> = match c {
        2 => vec!["true".into(), "false".into()],
        3 => vec!["true".into(), "false".into(), "neither".into()],
        _ => (0..c).map(|i| format!("label{i}")).collect(),
    };
    let label_space = LabelSpace::new(labels.clone(), labels).expect("synthetic labels are distinct");
    TaskSchema {
        task_id: SYNTHETIC_TASK_ID.into(),
        template_id: "main".into(),
        task_type: TaskType::Nli,
        template: "Premise: {premise} Hypothesis: {hypothesis} Answer:".into(),
        answer_cue: "Answer:".into(),
        label_space,
        metric: Metric::Accuracy,
        domain_string: "Answer:".into(),
        negative_label: None,
    }
}

fn store_distribution(store: &RecordStore, schema: &TaskSchema, prompt: &str, p: &ProbVector) -> Result<()> {
    let p = clamp_probs(p, DEFAULT_EPS);
    for (i, candidate) in schema.label_space.continuations().into_iter().enumerate() {
        store.insert(LogprobRecord::new(SYNTHETIC_MODEL_ID, prompt, candidate, p.get(i).ln(), 1))?;
    }
    Ok(())
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let c = config.num_labels;
    let schema = synthetic_schema(c);
    let uniform = vec![1.0 / c as f64; c];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut examples = Vec::with_capacity(config.n);
    let mut confounds = Vec::with_capacity(config.n);
    let mut triples = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let gold = rng.random_range(0..c);
        let confound = rng.random_range(0..c);
        let truth = peaked(c, gold, config.peak_mass);
        let conf = peaked(c, confound, config.peak_mass);
        let triple = ProbTriple::new(
            mix(&truth, &conf, config.signal),
            mix(&conf, &uniform, config.beta_p),
            mix(&conf, &uniform, config.beta_h),
        )?;
        examples.push(Example::new(
            format!("premise-{i} text-{i}"),
            format!("hypothesis-{i} text-{i}"),
            Some(gold),
        ));
        confounds.push(confound);
        triples.push(triple);
    }

    let store = RecordStore::in_memory();
    let ctx = FewShotContext::zero_shot();
    let flat = ProbVector::uniform(c);
    store_distribution(&store, &schema, &domain_prompt(&schema), &flat)?;
    for mode in Mode::ALL {
        let mut aux = content_free_prompts_for(&schema, mode, &ctx);
        aux.extend(random_text_prompts_for(&schema, &examples, DC_SAMPLES, SYNTHETIC_DC_SEED, mode, &ctx)?);
        for prompt in aux {
            store_distribution(&store, &schema, &prompt, &flat)?;
        }
    }
    // A random text can reproduce an example's prompt; the example wins.
    for (ex, t) in examples.iter().zip(&triples) {
        store_distribution(&store, &schema, &render(&schema, ex, Mode::Joint, &ctx)?, &t.joint)?;
        store_distribution(&store, &schema, &render(&schema, ex, Mode::PremiseOnly, &ctx)?, &t.premise_only)?;
        store_distribution(&store, &schema, &render(&schema, ex, Mode::HypothesisOnly, &ctx)?, &t.hypothesis_only)?;
    }

    Ok(SyntheticData {
        config: config.clone(),
        schema,
        examples,
        confounds,
        triples,
        store,
    })
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const TEMPLATES_FILE: &str = "templates.toml";

impl SyntheticData {
    /// Writes `records.jsonl`, `examples.jsonl` and `templates.toml` into
    /// `dir`, each replaced atomically.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let mut registry = TemplateRegistry::default();
        registry.insert(self.schema.clone());
        crate::io::write_atomic(&dir.join(TEMPLATES_FILE), registry.to_toml_string().as_bytes())?;
        crate::io::write_atomic(&dir.join(EXAMPLES_FILE), super::examples_to_jsonl(&self.examples).as_bytes())?;
        self.store.write_canonical(&dir.join(RECORDS_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::argmax_index;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n: 200,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn no_confound_means_perfect_joint() {
        let data = generate_synthetic(&SyntheticConfig {
            beta_h: 0.0,
            signal: 1.0,
            ..small(1)
        })
        .unwrap();
        for (ex, t) in data.examples.iter().zip(&data.triples) {
            assert_eq!(argmax_index(t.joint.values()).unwrap().0, ex.gold_label.unwrap());
            assert!((t.hypothesis_only.get(0) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_values() {
        let data = generate_synthetic(&small(7)).unwrap();
        for ((ex, t), &k) in data.examples.iter().zip(&data.triples).zip(&data.confounds) {
            let g = ex.gold_label.unwrap();
            let expected_joint = if g == k { 0.9 } else { 0.4 * 0.9 + 0.6 * 0.1 };
            assert!((t.joint.get(g) - expected_joint).abs() < 1e-12);
            assert!((t.hypothesis_only.get(k) - (0.9 * 0.9 + 0.1 * 0.5)).abs() < 1e-12);
            assert!((t.premise_only.get(k) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        let c = generate_synthetic(&small(4)).unwrap();
        assert_eq!(a.store.to_canonical_string(), b.store.to_canonical_string());
        assert_eq!(a.examples, b.examples);
        assert_ne!(
            a.examples.iter().map(|e| e.gold_label).collect::<Vec<_>>(),
            c.examples.iter().map(|e| e.gold_label).collect::<Vec<_>>()
        );
    }

    #[test]
    fn store_reproduces_triples() {
        let data = generate_synthetic(&small(2)).unwrap();
        let ctx = FewShotContext::zero_shot();
        let ex = &data.examples[5];
        let prompt = render(&data.schema, ex, Mode::HypothesisOnly, &ctx).unwrap();
        let lps: Vec<f64> = data
            .schema
            .label_space
            .continuations()
            .iter()
            .map(|c| data.store.lookup(SYNTHETIC_MODEL_ID, &prompt, c).unwrap().logprob)
            .collect();
        let p = crate::prob::softmax_from_logprobs(&lps).unwrap();
        assert!((p.get(0) - data.triples[5].hypothesis_only.get(0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        for bad in [
            SyntheticConfig { beta_h: 1.5, ..small(0) },
            SyntheticConfig { signal: 0.0, ..small(0) },
            SyntheticConfig { n: 0, ..small(0) },
            SyntheticConfig { num_labels: 1, ..small(0) },
            SyntheticConfig { peak_mass: 0.2, ..small(0) },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
        }
    }
}
