//! Evaluation protocol: gather the three distributions per example, apply
//! every method, score the task metric and collect the diagnostics.

mod diagnostics;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};

pub use diagnostics::{bias_diagnostics, flip_accounting, BiasDiagnostics, FlipAccounting};
pub use metrics::{accuracy, macro_f1, Metric};
pub use report::{
    aggregate_csv, audit_csv, diagnostics_csv, flips_csv, markdown_summary, read_results, summary_csv,
    write_outcome, ReportSummary, ResultsFile, RESULTS_FILE,
};

use crate::backend::{record_hash, BackendConfig, LogprobRequest, Scorer, ScoringRule};
use crate::error::{Error, Result};
use crate::prob::{argmax_index, ProbTriple, ProbVector, DEFAULT_EPS, MAX_EPS};
use crate::prompting::{
    content_free_prompts_for, domain_prompt, random_text_prompts_for, render, sample_few_shot, Example,
    FewShotContext, Mode, TaskSchema, CONTENT_FREE_TOKENS, DC_SAMPLES, MAX_SHOTS,
};
use crate::scoring::{estimate_bc_prior, Auxiliary, Baseline, Method, MethodConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub task_id: String,
    pub template_id: String,
    pub split: String,
    pub methods: Vec<Method>,
    pub n_shots: usize,
    pub seeds: Vec<u64>,
    pub backend: BackendConfig,
    pub eps: f64,
    pub scoring_rule: ScoringRule,
    pub model_id: String,
    pub dc_samples: usize,
    pub dc_seed: u64,
}

impl RunSpec {
    pub fn new(task_id: impl Into<String>, model_id: impl Into<String>, methods: Vec<Method>) -> Self {
        Self {
            task_id: task_id.into(),
            template_id: "main".into(),
            split: "validation".into(),
            methods,
            n_shots: 0,
            seeds: Vec::new(),
            backend: BackendConfig::offline(),
            eps: DEFAULT_EPS,
            scoring_rule: ScoringRule::Sum,
            model_id: model_id.into(),
            dc_samples: DC_SAMPLES,
            dc_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return Err(Error::Config(format!("method {dup} listed twice")));
        }
        if self.n_shots > MAX_SHOTS {
            return Err(Error::ShotCount(self.n_shots));
        }
        if self.n_shots > 0 && self.seeds.is_empty() {
            return Err(Error::Config("few-shot runs need at least one seed".into()));
        }
        if !(self.eps > 0.0 && self.eps <= MAX_EPS) {
            return Err(Error::Config(format!("eps must lie in (0, {MAX_EPS}]")));
        }
        if self.dc_samples == 0 {
            return Err(Error::Config("dc_samples must be at least 1".into()));
        }
        self.backend.validate()
    }

    fn modes_for(&self, baseline: Baseline) -> Vec<Mode> {
        let composed = self.methods.contains(&Method::Composed(baseline));
        let plain = self.methods.iter().any(|m| *m == plain_method(baseline));
        if composed {
            Mode::ALL.to_vec()
        } else if plain {
            vec![Mode::Joint]
        } else {
            Vec::new()
        }
    }
}

fn plain_method(b: Baseline) -> Method {
    match b {
        Baseline::Cc => Method::Cc,
        Baseline::Dcpmi => Method::Dcpmi,
        Baseline::Dc => Method::Dc,
        Baseline::Bc => Method::Bc,
    }
}

/// Everything scored for one run: per-example triples plus the auxiliary
/// distributions for each stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub triples: Vec<ProbTriple>,
    /// Joint, premise-only and hypothesis-only prompt hashes; empty when the
    /// triples were injected.
    pub prompt_hashes: Vec<[String; 3]>,
    pub joint: Auxiliary,
    pub premise_only: Auxiliary,
    pub hypothesis_only: Auxiliary,
}

impl Evidence {
    /// Triples supplied directly, with uniform auxiliaries.
    pub fn injected(triples: Vec<ProbTriple>) -> Result<Self> {
        let c = triples.first().ok_or(Error::EmptyBatch)?.num_labels();
        if let Some((i, t)) = triples.iter().enumerate().find(|(_, t)| t.num_labels() != c) {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: t.num_labels(),
            }
            .at_example(i));
        }
        let n = triples.len();
        Ok(Self {
            triples,
            prompt_hashes: vec![Default::default(); n],
            joint: Auxiliary::uniform(c),
            premise_only: Auxiliary::uniform(c),
            hypothesis_only: Auxiliary::uniform(c),
        })
    }

    fn stream_mut(&mut self, mode: Mode) -> &mut Auxiliary {
        match mode {
            Mode::Joint => &mut self.joint,
            Mode::PremiseOnly => &mut self.premise_only,
            Mode::HypothesisOnly => &mut self.hypothesis_only,
        }
    }
}

enum AuxSlot {
    ContentFree(Mode),
    Domain,
    Random(Mode),
}

/// Every prompt a run will score, example prompts first.
pub fn run_requests(
    spec: &RunSpec,
    schema: &TaskSchema,
    examples: &[Example],
    context: &FewShotContext,
) -> Result<Vec<LogprobRequest>> {
    Ok(plan(spec, schema, examples, context)?.0)
}

fn plan(
    spec: &RunSpec,
    schema: &TaskSchema,
    examples: &[Example],
    context: &FewShotContext,
) -> Result<(Vec<LogprobRequest>, Vec<AuxSlot>)> {
    let candidates = schema.label_space.continuations();
    let request = |prompt: String| LogprobRequest::new(spec.model_id.clone(), prompt, candidates.clone());
    let mut requests = Vec::with_capacity(examples.len() * 3);
    for (i, ex) in examples.iter().enumerate() {
        for mode in Mode::ALL {
            let prompt = render(schema, ex, mode, context).map_err(|e| e.at_example(i))?;
            requests.push(request(prompt)?);
        }
    }
    let mut slots = Vec::new();
    for mode in spec.modes_for(Baseline::Cc) {
        for prompt in content_free_prompts_for(schema, mode, context) {
            requests.push(request(prompt)?);
            slots.push(AuxSlot::ContentFree(mode));
        }
    }
    if !spec.modes_for(Baseline::Dcpmi).is_empty() {
        requests.push(request(domain_prompt(schema))?);
        slots.push(AuxSlot::Domain);
    }
    for mode in spec.modes_for(Baseline::Dc) {
        for prompt in random_text_prompts_for(schema, examples, spec.dc_samples, spec.dc_seed, mode, context)? {
            requests.push(request(prompt)?);
            slots.push(AuxSlot::Random(mode));
        }
    }
    Ok((requests, slots))
}

/// Scores every prompt the run needs through `scorer`.
pub fn gather_evidence(
    spec: &RunSpec,
    schema: &TaskSchema,
    examples: &[Example],
    context: &FewShotContext,
    scorer: &Scorer,
) -> Result<Evidence> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (requests, slots) = plan(spec, schema, examples, context)?;
    let mut results = scorer.fetch_many(&requests).into_iter();

    let mut triples = Vec::with_capacity(examples.len());
    let mut hashes = Vec::with_capacity(examples.len());
    for (i, chunk) in requests.chunks(3).take(examples.len()).enumerate() {
        let mut next = || results.next().expect("one result per request").map_err(|e| e.at_example(i));
        let (j, p, h) = (next()?, next()?, next()?);
        triples.push(ProbTriple::new(j, p, h).map_err(|e| e.at_example(i))?);
        hashes.push([0, 1, 2].map(|k| record_hash(&spec.model_id, &chunk[k].prompt, "")));
    }

    let mut evidence = Evidence {
        triples,
        prompt_hashes: hashes,
        joint: Auxiliary::default(),
        premise_only: Auxiliary::default(),
        hypothesis_only: Auxiliary::default(),
    };
    for (slot, result) in slots.iter().zip(results) {
        let p = result?;
        match *slot {
            AuxSlot::ContentFree(mode) => evidence
                .stream_mut(mode)
                .cc_content_free
                .get_or_insert_with(Vec::new)
                .push(p),
            AuxSlot::Domain => {
                for mode in Mode::ALL {
                    evidence.stream_mut(mode).dcpmi_domain = Some(p.clone());
                }
            }
            AuxSlot::Random(mode) => evidence
                .stream_mut(mode)
                .dc_random
                .get_or_insert_with(Vec::new)
                .push(p),
        }
    }
    Ok(evidence)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub value: f64,
    /// Examples whose arg-max needed the lowest-index tie rule.
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutput {
    pub scores: Vec<f64>,
    pub prediction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub index: usize,
    pub gold: usize,
    pub prompt_hashes: [String; 3],
    pub triple: ProbTriple,
    /// One entry per method, in the order of [`EvalReport::results`].
    pub outputs: Vec<MethodOutput>,
}

/// Conventions a report was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub eps: f64,
    pub scoring_rule: ScoringRule,
    pub missing_slot_rule: String,
    pub content_free_tokens: Vec<String>,
    pub cc_affine: String,
    pub dc_samples: usize,
    pub dc_seed: u64,
    pub dc_corpus: String,
    pub bc_prior: String,
    pub macro_f1_convention: String,
    pub tie_rule: String,
}

impl Settings {
    pub fn for_run(spec: &RunSpec) -> Self {
        Self {
            eps: spec.eps,
            scoring_rule: spec.scoring_rule,
            missing_slot_rule: "missing slot replaced by the empty string; scaffold whitespace and punctuation tidied"
                .into(),
            content_free_tokens: CONTENT_FREE_TOKENS.iter().map(|s| s.to_string()).collect(),
            cc_affine: "W = diag(p_cf)^-1, b = 0".into(),
            dc_samples: spec.dc_samples,
            dc_seed: spec.dc_seed,
            dc_corpus: "evaluation split texts, bag-of-words sampled".into(),
            bc_prior: "mean over the full evaluation split, per stream".into(),
            macro_f1_convention: "classes absent from gold and predictions contribute F1 = 0".into(),
            tie_rule: "lowest label index".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub template_id: String,
    pub split: String,
    pub model_id: String,
    pub metric: Metric,
    pub n_shots: usize,
    pub seed: Option<u64>,
    pub n_examples: usize,
    pub results: Vec<MethodResult>,
    pub audit: Vec<AuditRow>,
    pub diagnostics: BiasDiagnostics,
    pub flips: Vec<FlipAccounting>,
    pub settings: Settings,
}

impl EvalReport {
    pub fn value(&self, method: Method) -> Option<f64> {
        self.results.iter().find(|r| r.method == method).map(|r| r.value)
    }

    pub fn predictions(&self, method: Method) -> Option<Vec<usize>> {
        let k = self.results.iter().position(|r| r.method == method)?;
        Some(self.audit.iter().map(|row| row.outputs[k].prediction).collect())
    }

    pub fn flips_for(&self, method: Method) -> Option<&FlipAccounting> {
        self.flips.iter().find(|f| f.method == method)
    }
}

/// Applies every method of `spec` to the evidence and scores the results.
pub fn evaluate(
    spec: &RunSpec,
    schema: &TaskSchema,
    examples: &[Example],
    evidence: &Evidence,
    seed: Option<u64>,
) -> Result<EvalReport> {
    spec.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if examples.len() != evidence.triples.len() {
        return Err(Error::DimensionMismatch {
            expected: examples.len(),
            actual: evidence.triples.len(),
        });
    }
    let c = schema.num_labels();
    let gold = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| match ex.gold_label {
            Some(g) if g < c => Ok(g),
            Some(g) => Err(Error::InvalidDimension(format!("gold label {g} outside {c} labels")).at_example(i)),
            None => Err(Error::EmptyInput("example has no gold label".into()).at_example(i)),
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, t) in evidence.triples.iter().enumerate() {
        t.joint.ensure_len(c).map_err(|e| e.at_example(i))?;
    }

    let mut streams = [
        evidence.joint.clone(),
        evidence.premise_only.clone(),
        evidence.hypothesis_only.clone(),
    ];
    if spec.methods.iter().any(|m| m.baseline() == Some(Baseline::Bc)) {
        let pick: [fn(&ProbTriple) -> &ProbVector; 3] = [|t| &t.joint, |t| &t.premise_only, |t| &t.hypothesis_only];
        for (aux, get) in streams.iter_mut().zip(pick) {
            let batch: Vec<ProbVector> = evidence.triples.iter().map(|t| get(t).clone()).collect();
            aux.bc_prior = Some(estimate_bc_prior(&batch)?);
        }
    }
    let [joint, premise_only, hypothesis_only] = streams;

    let mut results = Vec::with_capacity(spec.methods.len());
    let mut outputs: Vec<Vec<MethodOutput>> = vec![Vec::with_capacity(spec.methods.len()); examples.len()];
    let mut predictions = Vec::with_capacity(spec.methods.len());
    for &method in &spec.methods {
        let mut config =
            MethodConfig::new(method).with_streams(joint.clone(), premise_only.clone(), hypothesis_only.clone());
        config.eps = spec.eps;
        config.validate()?;
        let mut preds = Vec::with_capacity(examples.len());
        let mut ties = 0;
        for (i, t) in evidence.triples.iter().enumerate() {
            let scores = config.score(t).map_err(|e| e.at_example(i))?;
            let (label, tie) = argmax_index(scores.values())?;
            ties += usize::from(tie);
            preds.push(label);
            outputs[i].push(MethodOutput {
                scores: scores.values().to_vec(),
                prediction: label,
            });
        }
        results.push(MethodResult {
            method,
            value: schema.metric.compute(&gold, &preds, c)?,
            ties,
        });
        predictions.push(preds);
    }

    let mut flips = Vec::new();
    if let Some(k) = spec.methods.iter().position(|m| *m == Method::Original) {
        for (j, &method) in spec.methods.iter().enumerate() {
            if j != k {
                flips.push(flip_accounting(method, &gold, &predictions[k], &predictions[j])?);
            }
        }
    }

    let diagnostics = bias_diagnostics(
        examples,
        &evidence.triples,
        &schema.label_space,
        schema.negative_label_index().min(c - 1),
    )?;

    let audit = outputs
        .into_iter()
        .enumerate()
        .map(|(i, outputs)| AuditRow {
            index: i,
            gold: gold[i],
            prompt_hashes: evidence.prompt_hashes.get(i).cloned().unwrap_or_default(),
            triple: evidence.triples[i].clone(),
            outputs,
        })
        .collect();

    Ok(EvalReport {
        task_id: schema.task_id.clone(),
        template_id: schema.template_id.clone(),
        split: spec.split.clone(),
        model_id: spec.model_id.clone(),
        metric: schema.metric,
        n_shots: spec.n_shots,
        seed,
        n_examples: examples.len(),
        results,
        audit,
        diagnostics,
        flips,
        settings: Settings::for_run(spec),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n_runs: usize,
}

/// Per-method mean and population standard deviation across reports.
pub fn aggregate_robustness(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    if reports.len() < 2 {
        return Err(Error::Aggregate(format!("need at least 2 reports, got {}", reports.len())));
    }
    let methods: Vec<Method> = reports[0].results.iter().map(|r| r.method).collect();
    let mut sorted = methods.clone();
    sorted.sort();
    for r in &reports[1..] {
        let mut other: Vec<Method> = r.results.iter().map(|x| x.method).collect();
        other.sort();
        if other != sorted {
            return Err(Error::Aggregate("reports cover different method sets".into()));
        }
    }
    Ok(methods
        .into_iter()
        .map(|m| {
            let values: Vec<f64> = reports.iter().map(|r| r.value(m).expect("method present")).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            AggregateRow {
                method: m,
                mean,
                std: var.sqrt(),
                n_runs: values.len(),
            }
        })
        .collect())
}

/// Reports for one run plus, when there are several, their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub reports: Vec<EvalReport>,
    pub aggregate: Option<Vec<AggregateRow>>,
}

/// Zero-shot: one report. Few-shot: one report per seed, each with its own
/// sampled demonstrations, plus the aggregate over seeds.
pub fn run_protocol(
    spec: &RunSpec,
    schema: &TaskSchema,
    examples: &[Example],
    train: &[Example],
    scorer: &Scorer,
) -> Result<RunOutcome> {
    spec.validate()?;
    let mut reports = Vec::new();
    if spec.n_shots == 0 {
        let evidence = gather_evidence(spec, schema, examples, &FewShotContext::zero_shot(), scorer)?;
        reports.push(evaluate(spec, schema, examples, &evidence, None)?);
    } else {
        for &seed in &spec.seeds {
            let context = sample_few_shot(train, spec.n_shots, seed)?;
            let evidence = gather_evidence(spec, schema, examples, &context, scorer)?;
            reports.push(evaluate(spec, schema, examples, &evidence, Some(seed))?);
        }
    }
    let aggregate = if reports.len() >= 2 {
        Some(aggregate_robustness(&reports)?)
    } else {
        None
    };
    Ok(RunOutcome {
        spec: spec.clone(),
        reports,
        aggregate,
    })
}
