//! Prompt construction for the joint, premise-only and hypothesis-only
//! queries, plus the auxiliary prompts the baselines condition on.
//!
//! Single-component prompts keep the template scaffold: the missing slot is
//! replaced by the empty string, and the scaffold (never the inserted text) is
//! then tidied by collapsing whitespace, dropping the space before
//! punctuation, dropping a period that directly follows another separator and
//! stripping leading separators.

mod registry;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use registry::{TaskType, TemplateRegistry};

use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::prob::LabelSpace;

pub const PREMISE_SLOT: &str = "{premise}";
pub const HYPOTHESIS_SLOT: &str = "{hypothesis}";

/// Placeholder tokens used by contextual calibration.
pub const CONTENT_FREE_TOKENS: [&str; 3] = ["N/A", "[MASK]", ""];

/// Number of random in-domain texts used by domain-context calibration.
pub const DC_SAMPLES: usize = 20;

pub const MAX_SHOTS: usize = 4;

const DEMO_SEPARATOR: &str = "\n";

// Private-use code points stand in for the slots while the scaffold is tidied.
const PREMISE_MARK: char = '\u{E000}';
const HYPOTHESIS_MARK: char = '\u{E001}';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub task_id: String,
    pub template_id: String,
    pub task_type: TaskType,
    pub template: String,
    pub answer_cue: String,
    pub label_space: LabelSpace,
    pub metric: Metric,
    pub domain_string: String,
    /// Label counted by the premise-/hypothesis-only bias diagnostic.
    pub negative_label: Option<String>,
}

impl TaskSchema {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Schema {
            task_id: self.task_id.clone(),
            reason,
        };
        for slot in [PREMISE_SLOT, HYPOTHESIS_SLOT] {
            let n = self.template.matches(slot).count();
            if n != 1 {
                return Err(fail(format!("template must contain {slot} exactly once, found {n}")));
            }
        }
        if self.template.contains([PREMISE_MARK, HYPOTHESIS_MARK]) {
            return Err(fail("template contains reserved code points".into()));
        }
        if self.answer_cue.trim().is_empty() {
            return Err(fail("empty answer cue".into()));
        }
        if !self.template.ends_with(&self.answer_cue) {
            return Err(fail(format!(
                "template must end with the answer cue {:?}",
                self.answer_cue
            )));
        }
        let tail_start = self.template.len() - self.answer_cue.len();
        if self.template[tail_start..].contains(['{', '}']) {
            return Err(fail("answer cue may not contain slots".into()));
        }
        if self.domain_string.trim().is_empty() {
            return Err(fail("empty domain string".into()));
        }
        let stance = self.task_type == TaskType::Stance;
        if stance != (self.metric == Metric::MacroF1) {
            return Err(fail("macro-F1 is used exactly for stance detection tasks".into()));
        }
        if let Some(neg) = &self.negative_label {
            if self.label_space.index_of(neg).is_none() {
                return Err(fail(format!("negative label `{neg}` not in label space")));
            }
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.label_space.len()
    }

    /// Index of the declared negative label, else of `false`, else 1.
    pub fn negative_label_index(&self) -> usize {
        self.negative_label
            .as_deref()
            .and_then(|l| self.label_space.index_of(l))
            .or_else(|| self.label_space.index_of("false"))
            .unwrap_or(1)
    }

    /// `task/template` identifier used in reports.
    pub fn key(&self) -> String {
        format!("{}/{}", self.task_id, self.template_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub premise: String,
    pub hypothesis: String,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<usize>,
}

impl Example {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>, gold_label: Option<usize>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            gold_label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    PremiseOnly,
    HypothesisOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Joint, Mode::PremiseOnly, Mode::HypothesisOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::PremiseOnly => "premise_only",
            Mode::HypothesisOnly => "hypothesis_only",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FewShotContext {
    pub demonstrations: Vec<(Example, usize)>,
    pub seed: Option<u64>,
}

impl FewShotContext {
    pub fn zero_shot() -> Self {
        Self::default()
    }

    pub fn n_shots(&self) -> usize {
        self.demonstrations.len()
    }

    fn prefix(&self, schema: &TaskSchema) -> String {
        let mut out = String::new();
        for (demo, gold) in &self.demonstrations {
            out.push_str(&fill_joint(&schema.template, &demo.premise, &demo.hypothesis));
            out.push_str(&schema.label_space.continuation(*gold));
            out.push_str(DEMO_SEPARATOR);
        }
        out
    }
}

fn fill_joint(template: &str, premise: &str, hypothesis: &str) -> String {
    // Slots are substituted in one pass so inserted text is never rescanned.
    let scaffold = template
        .replacen(PREMISE_SLOT, &PREMISE_MARK.to_string(), 1)
        .replacen(HYPOTHESIS_SLOT, &HYPOTHESIS_MARK.to_string(), 1);
    insert_slots(&scaffold, premise, hypothesis)
}

fn insert_slots(scaffold: &str, premise: &str, hypothesis: &str) -> String {
    let mut out = String::with_capacity(scaffold.len() + premise.len() + hypothesis.len());
    for ch in scaffold.chars() {
        match ch {
            PREMISE_MARK => out.push_str(premise),
            HYPOTHESIS_MARK => out.push_str(hypothesis),
            c => out.push(c),
        }
    }
    out
}

fn is_separator(c: char) -> bool {
    matches!(c, '.' | ',' | ';' | ':' | '?' | '!')
}

fn tidy_scaffold(scaffold: &str) -> String {
    let mut out = String::with_capacity(scaffold.len());
    for ch in scaffold.chars() {
        if ch.is_whitespace() {
            if !out.is_empty() && !out.ends_with(' ') {
                out.push(' ');
            }
            continue;
        }
        if is_separator(ch) {
            if out.ends_with(' ') {
                out.pop();
            }
            if ch == '.' && out.ends_with(['.', ',', ';', ':']) {
                continue;
            }
            if out.is_empty() {
                continue;
            }
        }
        out.push(ch);
    }
    out.trim_end().to_string()
}

fn render_slots(
    schema: &TaskSchema,
    premise: &str,
    hypothesis: &str,
    mode: Mode,
    context: &FewShotContext,
) -> String {
    let body = match mode {
        Mode::Joint => fill_joint(&schema.template, premise, hypothesis),
        Mode::PremiseOnly => {
            let scaffold = schema
                .template
                .replacen(PREMISE_SLOT, &PREMISE_MARK.to_string(), 1)
                .replacen(HYPOTHESIS_SLOT, "", 1);
            insert_slots(&tidy_scaffold(&scaffold), premise, "")
        }
        Mode::HypothesisOnly => {
            let scaffold = schema
                .template
                .replacen(PREMISE_SLOT, "", 1)
                .replacen(HYPOTHESIS_SLOT, &HYPOTHESIS_MARK.to_string(), 1);
            insert_slots(&tidy_scaffold(&scaffold), "", hypothesis)
        }
    };
    let mut prompt = context.prefix(schema);
    prompt.push_str(&body);
    prompt
}

/// Renders the query for one example in the requested mode, with any
/// demonstrations prepended in joint form.
pub fn render(schema: &TaskSchema, example: &Example, mode: Mode, context: &FewShotContext) -> Result<String> {
    let needs_premise = matches!(mode, Mode::Joint | Mode::PremiseOnly);
    let needs_hypothesis = matches!(mode, Mode::Joint | Mode::HypothesisOnly);
    if needs_premise && example.premise.trim().is_empty() {
        return Err(Error::EmptyInput(format!("premise is empty in {} mode", mode.as_str())));
    }
    if needs_hypothesis && example.hypothesis.trim().is_empty() {
        return Err(Error::EmptyInput(format!("hypothesis is empty in {} mode", mode.as_str())));
    }
    Ok(render_slots(schema, &example.premise, &example.hypothesis, mode, context))
}

/// Joint renders with both slots set to each content-free token.
pub fn content_free_prompts(schema: &TaskSchema) -> Vec<String> {
    content_free_prompts_for(schema, Mode::Joint, &FewShotContext::zero_shot())
}

/// Content-free prompts for one stream.
pub fn content_free_prompts_for(schema: &TaskSchema, mode: Mode, context: &FewShotContext) -> Vec<String> {
    CONTENT_FREE_TOKENS
        .iter()
        .map(|tok| render_slots(schema, tok, tok, mode, context))
        .collect()
}

pub fn domain_prompt(schema: &TaskSchema) -> String {
    schema.domain_string.clone()
}

/// Bag-of-words pseudo examples drawn from the corpus token pools.
///
/// Each slot is a with-replacement sample from that slot's token pool whose
/// length is the corpus mean token count, rounded.
pub fn random_text_pairs(corpus: &[Example], k: usize, seed: u64) -> Result<Vec<(String, String)>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::InvalidDimension("random text count must be at least 1".into()));
    }
    let premise_pool: Vec<&str> = corpus.iter().flat_map(|e| e.premise.split_whitespace()).collect();
    let hypothesis_pool: Vec<&str> = corpus.iter().flat_map(|e| e.hypothesis.split_whitespace()).collect();
    let n = corpus.len() as f64;
    let premise_len = (premise_pool.len() as f64 / n).round() as usize;
    let hypothesis_len = (hypothesis_pool.len() as f64 / n).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |pool: &[&str], len: usize| -> String {
        if pool.is_empty() {
            return String::new();
        }
        (0..len)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((0..k)
        .map(|_| {
            let p = draw(&premise_pool, premise_len);
            let h = draw(&hypothesis_pool, hypothesis_len);
            (p, h)
        })
        .collect())
}

pub fn random_text_prompts(schema: &TaskSchema, corpus: &[Example], k: usize, seed: u64) -> Result<Vec<String>> {
    random_text_prompts_for(schema, corpus, k, seed, Mode::Joint, &FewShotContext::zero_shot())
}

pub fn random_text_prompts_for(
    schema: &TaskSchema,
    corpus: &[Example],
    k: usize,
    seed: u64,
    mode: Mode,
    context: &FewShotContext,
) -> Result<Vec<String>> {
    Ok(random_text_pairs(corpus, k, seed)?
        .iter()
        .map(|(p, h)| render_slots(schema, p, h, mode, context))
        .collect())
}

/// Uniform sample of `n` labeled demonstrations without replacement.
pub fn sample_few_shot(train: &[Example], n: usize, seed: u64) -> Result<FewShotContext> {
    if !(1..=MAX_SHOTS).contains(&n) {
        return Err(Error::ShotCount(n));
    }
    if train.len() < n {
        return Err(Error::InsufficientTrain {
            requested: n,
            available: train.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, train.len(), n);
    let demonstrations = picked
        .into_iter()
        .map(|i| {
            let ex = &train[i];
            ex.gold_label
                .map(|g| (ex.clone(), g))
                .ok_or_else(|| Error::EmptyInput(format!("training example {i} has no gold label")))
        })
        .collect::<Result<_>>()?;
    Ok(FewShotContext {
        demonstrations,
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> TemplateRegistry {
        TemplateRegistry::builtin()
    }

    fn rte() -> TaskSchema {
        registry().get("rte", "main").unwrap().clone()
    }

    #[test]
    fn rte_joint_render() {
        let p = render(&rte(), &Example::new("A", "B", None), Mode::Joint, &FewShotContext::zero_shot()).unwrap();
        assert_eq!(p, "A entails B. true or false? Answer:");
    }

    #[test]
    fn rte_single_component_renders() {
        let ex = Example::new("A", "B", None);
        let ctx = FewShotContext::zero_shot();
        assert_eq!(
            render(&rte(), &ex, Mode::HypothesisOnly, &ctx).unwrap(),
            "entails B. true or false? Answer:"
        );
        assert_eq!(
            render(&rte(), &ex, Mode::PremiseOnly, &ctx).unwrap(),
            "A entails. true or false? Answer:"
        );
    }

    #[test]
    fn cb_single_component_renders() {
        let cb = registry().get("cb", "main").unwrap().clone();
        let ex = Example::new("It rained", "The ground is wet", None);
        let ctx = FewShotContext::zero_shot();
        assert_eq!(
            render(&cb, &ex, Mode::Joint, &ctx).unwrap(),
            "It rained. Hypothesis: The ground is wet. true, false or neither? Answer:"
        );
        assert_eq!(
            render(&cb, &ex, Mode::PremiseOnly, &ctx).unwrap(),
            "It rained. Hypothesis: true, false or neither? Answer:"
        );
        assert_eq!(
            render(&cb, &ex, Mode::HypothesisOnly, &ctx).unwrap(),
            "Hypothesis: The ground is wet. true, false or neither? Answer:"
        );
    }

    #[test]
    fn slot_text_is_inserted_verbatim() {
        let ex = Example::new("a  .  b", " x ,y ", None);
        let ctx = FewShotContext::zero_shot();
        let p = render(&rte(), &ex, Mode::PremiseOnly, &ctx).unwrap();
        assert!(p.starts_with("a  .  b entails."));
        let h = render(&rte(), &ex, Mode::HypothesisOnly, &ctx).unwrap();
        assert!(h.contains(" x ,y "));
    }

    #[test]
    fn empty_slot_in_own_mode_is_rejected() {
        let ctx = FewShotContext::zero_shot();
        let ex = Example::new("", "B", None);
        assert!(matches!(render(&rte(), &ex, Mode::PremiseOnly, &ctx), Err(Error::EmptyInput(_))));
        assert!(matches!(render(&rte(), &ex, Mode::Joint, &ctx), Err(Error::EmptyInput(_))));
        assert!(render(&rte(), &ex, Mode::HypothesisOnly, &ctx).is_ok());
    }

    #[test]
    fn demonstrations_are_prepended_in_joint_form() {
        let ctx = FewShotContext {
            demonstrations: vec![(Example::new("C", "D", Some(1)), 1), (Example::new("E", "F", Some(0)), 0)],
            seed: Some(3),
        };
        let p = render(&rte(), &Example::new("A", "B", None), Mode::HypothesisOnly, &ctx).unwrap();
        assert_eq!(
            p,
            "C entails D. true or false? Answer: false\nE entails F. true or false? Answer: true\nentails B. true or false? Answer:"
        );
        let zero = render(&rte(), &Example::new("A", "B", None), Mode::Joint, &FewShotContext::zero_shot()).unwrap();
        assert!(!zero.contains('\n'));
    }

    #[test]
    fn content_free_prompts_for_rte() {
        let prompts = content_free_prompts(&rte());
        assert_eq!(prompts.len(), 3);
        assert_eq!(prompts[0], "N/A entails N/A. true or false? Answer:");
        assert_eq!(prompts[1], "[MASK] entails [MASK]. true or false? Answer:");
        assert_eq!(prompts[2], " entails . true or false? Answer:");
        assert!(prompts.iter().all(|p| p.ends_with("true or false? Answer:")));
        assert_ne!(prompts[0], prompts[1]);
        assert_ne!(prompts[1], prompts[2]);
        assert_ne!(prompts[0], prompts[2]);
    }

    #[test]
    fn domain_prompts() {
        assert_eq!(domain_prompt(&rte()), "true or false? Answer:");
        let vast = registry().get("vast", "main").unwrap().clone();
        assert_eq!(domain_prompt(&vast), "favor, against or neutral? Answer:");
        assert_eq!(domain_prompt(&vast), domain_prompt(&vast));
    }

    #[test]
    fn random_text_prompts_shape() {
        let corpus = vec![
            Example::new("the cat sat", "a dog", Some(0)),
            Example::new("birds fly high up", "fish swim", Some(1)),
        ];
        let prompts = random_text_prompts(&rte(), &corpus, DC_SAMPLES, 11).unwrap();
        assert_eq!(prompts.len(), 20);
        assert_eq!(prompts, random_text_prompts(&rte(), &corpus, DC_SAMPLES, 11).unwrap());

        let pairs = random_text_pairs(&corpus, 5, 11).unwrap();
        for (p, h) in pairs {
            // mean lengths 3.5 -> 4 and 2.0 -> 2
            assert_eq!(p.split(' ').count(), 4);
            assert_eq!(h.split(' ').count(), 2);
        }
    }

    #[test]
    fn random_text_single_token_corpus() {
        let corpus = vec![Example::new("word", "word", None)];
        for (p, h) in random_text_pairs(&corpus, 4, 0).unwrap() {
            assert_eq!(p, "word");
            assert_eq!(h, "word");
        }
        assert!(matches!(random_text_pairs(&[], 3, 0), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn few_shot_sampling() {
        let one = vec![Example::new("p", "h", Some(0))];
        let ctx = sample_few_shot(&one, 1, 9).unwrap();
        assert_eq!(ctx.demonstrations, vec![(one[0].clone(), 0)]);

        let train: Vec<Example> = (0..100).map(|i| Example::new(format!("p{i}"), format!("h{i}"), Some(i % 2))).collect();
        let a = sample_few_shot(&train, 4, 5).unwrap();
        assert_eq!(a, sample_few_shot(&train, 4, 5).unwrap());
        assert_eq!(a.n_shots(), 4);
        let distinct: std::collections::HashSet<_> = a.demonstrations.iter().map(|(e, _)| e.premise.clone()).collect();
        assert_eq!(distinct.len(), 4);

        assert!(matches!(sample_few_shot(&one, 2, 0), Err(Error::InsufficientTrain { .. })));
        assert!(matches!(sample_few_shot(&train, 5, 0), Err(Error::ShotCount(5))));
        assert!(matches!(sample_few_shot(&train, 0, 0), Err(Error::ShotCount(0))));
    }

    #[test]
    fn tidy_rules() {
        assert_eq!(tidy_scaffold(" entails \u{E001}. x? Answer:"), "entails \u{E001}. x? Answer:");
        assert_eq!(tidy_scaffold("Sentence 1: . Sentence 2: \u{E001}."), "Sentence 1: Sentence 2: \u{E001}.");
        assert_eq!(tidy_scaffold("What is the stance of  on \u{E001}?"), "What is the stance of on \u{E001}?");
    }
}
