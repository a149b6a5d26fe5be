mod args;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, CompareArgs, ExportArgs, RunArgs, SynthArgs};
use taskcal::backend::{
    export_records, load_offline, write_prompts_file, BackendConfig, BackendKind, LogprobRequest, RecordStore,
    RetryPolicy, Scorer, ScoringRule,
};
use taskcal::datasets::{
    generate_synthetic, load_split, read_examples_file, DatasetManifest, SyntheticConfig, EXAMPLES_FILE,
    RECORDS_FILE, TEMPLATES_FILE,
};
use taskcal::eval::{
    aggregate_csv, aggregate_robustness, diagnostics_csv, read_results, run_protocol, run_requests,
    write_outcome, EvalReport, RunOutcome, RunSpec, RESULTS_FILE,
};
use taskcal::io::write_atomic;
use taskcal::prob::DEFAULT_EPS;
use taskcal::prompting::{sample_few_shot, Example, FewShotContext, TaskSchema, TemplateRegistry};
use taskcal::scoring::Method;
use taskcal::Error;

const DEFAULT_METHODS: &str = "original,cc,dcpmi,dc,bc,tc";
const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const TRAIN_FILE: &str = "train.jsonl";

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn error_kind(e: &Error) -> &'static str {
    match e.root() {
        Error::InvalidLogprob { .. }
        | Error::InvalidDimension(_)
        | Error::DimensionMismatch { .. }
        | Error::InvalidProbability(_)
        | Error::EmptyBatch => "numeric",
        Error::LabelSpace(_) | Error::Schema { .. } | Error::UnknownTemplate(_) => "template",
        Error::EmptyInput(_) | Error::EmptyCorpus | Error::InsufficientTrain { .. } | Error::ShotCount(_) => {
            "prompting"
        }
        Error::Config(_) => "config",
        Error::BackendUnavailable { .. } => "backend unavailable",
        Error::Capability(_) => "backend capability",
        Error::CacheMiss { .. } => "cache miss",
        Error::Parse { .. } => "parse",
        Error::LabelMap { .. } | Error::MalformedRow { .. } | Error::CountMismatch { .. } | Error::Manifest(_) => {
            "dataset"
        }
        Error::Aggregate(_) => "aggregate",
        Error::Io { .. } => "io",
        Error::AtExample { .. } => "runtime",
    }
}

fn is_usage(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::Config(_) | Error::UnknownTemplate(_) | Error::ShotCount(_)
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("taskcal: usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("taskcal: {} error: {e}", error_kind(&e));
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            toml::from_str::<RunArgs>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?
        }
        None => RunArgs::default(),
    };
    match cli.command {
        Command::Run(a) => cmd_run(a.or(config)),
        Command::Diagnose(a) => cmd_diagnose(a.or(config)),
        Command::Export(a) => cmd_export(a, config),
        Command::Synth(a) => cmd_synth(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

struct Inputs {
    spec: RunSpec,
    schema: TaskSchema,
    splits: Vec<(String, Vec<Example>)>,
    train: Vec<Example>,
    scorer: Option<Scorer>,
    out: Option<PathBuf>,
    effective: serde_json::Value,
}

struct StoreLayout {
    records: PathBuf,
    dir: Option<PathBuf>,
}

impl StoreLayout {
    fn new(path: &Path) -> Self {
        if path.is_dir() {
            Self {
                records: path.join(RECORDS_FILE),
                dir: Some(path.to_path_buf()),
            }
        } else {
            Self {
                records: path.to_path_buf(),
                dir: None,
            }
        }
    }

    fn file(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name)).filter(|p| p.is_file())
    }
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    names
        .iter()
        .map(|n| n.parse::<Method>().map_err(|_| CliError::Usage(format!("unknown method `{n}`"))))
        .collect()
}

fn parse_rule(name: &str) -> CliResult<ScoringRule> {
    match name {
        "sum" => Ok(ScoringRule::Sum),
        "mean_per_token" => Ok(ScoringRule::MeanPerToken),
        other => usage(format!("unknown scoring rule `{other}` (expected sum or mean_per_token)")),
    }
}

/// Validates flags, loads every input and builds the scorer.
fn resolve(mut a: RunArgs, default_methods: &str, need_scorer: bool) -> CliResult<Inputs> {
    let Some(task) = a.task.clone() else {
        return usage("--task is required");
    };
    let methods = a
        .methods
        .get_or_insert_with(|| default_methods.split(',').map(String::from).collect())
        .clone();
    let methods = parse_methods(&methods)?;
    let template = a.template.get_or_insert_with(|| "main".into()).clone();
    let shots = *a.shots.get_or_insert(0);
    if shots == 0 && a.seeds.is_some() {
        return usage("--seeds only applies with --shots > 0");
    }
    let seeds = if shots > 0 {
        a.seeds.get_or_insert_with(|| DEFAULT_SEEDS.to_vec()).clone()
    } else {
        Vec::new()
    };
    let backend = a.backend.get_or_insert_with(|| "offline".into()).clone();
    let kind = match backend.as_str() {
        "offline" => BackendKind::Offline,
        "http" => BackendKind::Http,
        other => return usage(format!("unknown backend `{other}` (expected offline or http)")),
    };
    if kind == BackendKind::Offline {
        for (set, flag) in [
            (a.endpoint.is_some(), "--endpoint"),
            (a.api_key_env.is_some(), "--api-key-env"),
            (a.max_attempts.is_some(), "--max-attempts"),
        ] {
            if set {
                return usage(format!("{flag} only applies to --backend http"));
            }
        }
        if need_scorer && a.store.is_none() {
            return usage("--backend offline needs --store");
        }
    }
    if kind == BackendKind::Http && a.endpoint.is_none() {
        return usage("--backend http needs --endpoint");
    }
    if a.examples.is_some() && (a.manifest.is_some() || a.split.is_some()) {
        return usage("--examples conflicts with --manifest/--split");
    }
    let rule = parse_rule(a.scoring_rule.get_or_insert_with(|| "sum".into()))?;
    let eps = *a.eps.get_or_insert(DEFAULT_EPS);
    let dc_seed = *a.dc_seed.get_or_insert(0);
    if a.limit == Some(0) {
        return usage("--limit must be at least 1");
    }

    let layout = a.store.as_deref().map(StoreLayout::new);

    let mut registry = TemplateRegistry::builtin();
    if let Some(path) = layout.as_ref().and_then(|l| l.file(TEMPLATES_FILE)) {
        registry.merge(TemplateRegistry::load(&path)?);
    }
    if let Some(path) = &a.templates {
        registry.merge(TemplateRegistry::load(path)?);
    }
    let schema = registry.get(&task, &template)?.clone();

    let manifest_path = a.manifest.clone().or_else(|| {
        let fallback = PathBuf::from("manifests").join(format!("{task}.toml"));
        fallback.is_file().then_some(fallback)
    });
    let store_examples = layout.as_ref().and_then(|l| l.file(EXAMPLES_FILE));
    let mut manifest = None;
    let mut splits = if let Some(path) = &a.examples {
        vec![("examples".to_string(), read_examples_file(path)?)]
    } else if let (Some(path), None) = (&store_examples, &a.manifest) {
        vec![("examples".to_string(), read_examples_file(path)?)]
    } else if let Some(path) = manifest_path {
        let mut m = DatasetManifest::load(&path)?;
        if let Some(dir) = &a.data_dir {
            m.base_dir = dir.clone();
        }
        let names = match &a.split {
            Some(s) => vec![s.clone()],
            None => m.default_eval_splits(),
        };
        let mut out = Vec::new();
        for name in names {
            let examples = load_split(&m, &name)?;
            out.push((name, examples));
        }
        manifest = Some(m);
        out
    } else {
        return usage(format!(
            "no examples for task `{task}`: pass --examples, --manifest, or a --store directory with {EXAMPLES_FILE}"
        ));
    };
    if let Some(limit) = a.limit {
        for (_, ex) in &mut splits {
            ex.truncate(limit);
        }
    }

    let train = if shots == 0 {
        Vec::new()
    } else if let Some(path) = &a.train {
        read_examples_file(path)?
    } else if let Some(path) = layout.as_ref().and_then(|l| l.file(TRAIN_FILE)) {
        read_examples_file(&path)?
    } else if let Some(m) = manifest.as_ref().filter(|m| m.splits.contains_key("train")) {
        load_split(m, "train")?
    } else {
        return usage("few-shot runs need demonstrations: pass --train or a manifest with a train split");
    };

    let backend_config = BackendConfig {
        kind,
        endpoint_url: a.endpoint.clone(),
        api_key_env: a.api_key_env.clone(),
        max_in_flight: *a.max_in_flight.get_or_insert(4),
        timeout_ms: *a.timeout_ms.get_or_insert(30_000),
        retry: RetryPolicy {
            max_attempts: a.max_attempts.unwrap_or(RetryPolicy::default().max_attempts),
            backoff_base_ms: a.backoff_ms.unwrap_or(RetryPolicy::default().backoff_base_ms),
        },
    };
    backend_config.validate()?;

    let scorer = if need_scorer {
        let store = match (&layout, kind) {
            (Some(l), BackendKind::Offline) => load_offline(&l.records)?,
            (Some(l), BackendKind::Http) => RecordStore::open(&l.records)?,
            (None, _) => RecordStore::in_memory(),
        };
        if a.model.is_none() {
            let models: HashSet<String> = store.records().into_iter().map(|r| r.model_id).collect();
            match models.len() {
                1 => a.model = models.into_iter().next(),
                0 => return usage("--model is required (the store has no records to infer it from)"),
                _ => return usage("--model is required (the store holds several models)"),
            }
        }
        Some(Scorer::from_config(&backend_config, store, rule)?)
    } else {
        None
    };
    let Some(model) = a.model.clone() else {
        return usage("--model is required");
    };

    let spec = RunSpec {
        task_id: task,
        template_id: template,
        split: String::new(),
        methods,
        n_shots: shots,
        seeds,
        backend: backend_config,
        eps,
        scoring_rule: rule,
        model_id: model,
        dc_samples: taskcal::prompting::DC_SAMPLES,
        dc_seed,
    };
    spec.validate()?;
    let effective = serde_json::to_value(&a).expect("arguments serialize");
    Ok(Inputs {
        spec,
        schema,
        splits,
        train,
        scorer,
        out: a.out,
        effective,
    })
}

fn outcomes(inputs: &Inputs) -> CliResult<Vec<RunOutcome>> {
    let scorer = inputs.scorer.as_ref().expect("scorer resolved");
    let mut out = Vec::new();
    for (split, examples) in &inputs.splits {
        let mut spec = inputs.spec.clone();
        spec.split = split.clone();
        out.push(run_protocol(&spec, &inputs.schema, examples, &inputs.train, scorer)?);
    }
    Ok(out)
}

fn headline(outcome: &RunOutcome) -> Vec<(Method, f64)> {
    match &outcome.aggregate {
        Some(agg) => agg.iter().map(|a| (a.method, a.mean)).collect(),
        None => outcome.reports[0].results.iter().map(|r| (r.method, r.value)).collect(),
    }
}

fn split_mean_csv(outcomes: &[RunOutcome]) -> String {
    let mut out = String::from("method");
    for o in outcomes {
        out.push(',');
        out.push_str(&o.spec.split);
    }
    out.push_str(",mean\n");
    let per_split: Vec<Vec<(Method, f64)>> = outcomes.iter().map(headline).collect();
    for (k, (method, _)) in per_split[0].iter().enumerate() {
        out.push_str(&method.to_string());
        let values: Vec<f64> = per_split.iter().map(|s| s[k].1).collect();
        for v in &values {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push_str(&format!(",{:.4}\n", values.iter().sum::<f64>() / values.len() as f64));
    }
    out
}

fn print_outcome(outcome: &RunOutcome) {
    for r in &outcome.reports {
        let run = r.seed.map(|s| format!(" seed {s}")).unwrap_or_default();
        for m in &r.results {
            println!(
                "{}/{} {}{run} {:<10} {} {:.2}",
                r.task_id,
                r.template_id,
                r.split,
                m.method.to_string(),
                r.metric.as_str(),
                m.value
            );
        }
    }
    if let Some(agg) = &outcome.aggregate {
        for a in agg {
            println!("{} mean {:.2} std {:.2} over {} runs", a.method, a.mean, a.std, a.n_runs);
        }
    }
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    if a.out.is_none() {
        return usage("--out is required");
    }
    let inputs = resolve(a, DEFAULT_METHODS, true)?;
    let out = inputs.out.clone().expect("checked above");
    let outcomes = outcomes(&inputs)?;
    let multi = outcomes.len() > 1;
    for outcome in &outcomes {
        let dir = if multi { out.join(&outcome.spec.split) } else { out.clone() };
        write_outcome(&dir, outcome, &inputs.effective)?;
        print_outcome(outcome);
    }
    if multi {
        write_atomic(&out.join("split_mean.csv"), split_mean_csv(&outcomes).as_bytes())?;
    }
    println!("reports written to {}", out.display());
    Ok(())
}

fn report_suffix(r: &EvalReport) -> String {
    r.seed.map(|s| format!("_seed{s}")).unwrap_or_default()
}

fn cmd_diagnose(a: RunArgs) -> CliResult<()> {
    let inputs = resolve(a, "original,tc", true)?;
    let outcomes = outcomes(&inputs)?;
    let multi = outcomes.len() > 1;
    let mut files = Vec::new();
    for outcome in &outcomes {
        for r in &outcome.reports {
            let csv = diagnostics_csv(&r.diagnostics);
            println!("# {}/{} {}{}", r.task_id, r.template_id, r.split, report_suffix(r).replace('_', " "));
            print!("{csv}");
            if let Some(out) = &inputs.out {
                let dir = if multi { out.join(&r.split) } else { out.clone() };
                files.push((dir.join(format!("diagnostics{}.csv", report_suffix(r))), csv));
            }
        }
    }
    for (path, csv) in files {
        write_atomic(&path, csv.as_bytes())?;
    }
    Ok(())
}

fn contexts(inputs: &Inputs) -> CliResult<Vec<FewShotContext>> {
    if inputs.spec.n_shots == 0 {
        return Ok(vec![FewShotContext::zero_shot()]);
    }
    Ok(inputs
        .spec
        .seeds
        .iter()
        .map(|&s| sample_few_shot(&inputs.train, inputs.spec.n_shots, s))
        .collect::<taskcal::Result<_>>()?)
}

fn cmd_export(a: ExportArgs, config: RunArgs) -> CliResult<()> {
    let run = a.run.or(config);
    let (emit, out_store) = (a.emit_prompts, a.out_store);
    if emit.is_none() && out_store.is_none() {
        return usage("export needs --emit-prompts or --out-store");
    }
    let inputs = resolve(run, DEFAULT_METHODS, out_store.is_some())?;
    let mut seen = HashSet::new();
    let mut requests: Vec<LogprobRequest> = Vec::new();
    for ctx in contexts(&inputs)? {
        for (split, examples) in &inputs.splits {
            let mut spec = inputs.spec.clone();
            spec.split = split.clone();
            for r in run_requests(&spec, &inputs.schema, examples, &ctx)? {
                if seen.insert(r.clone()) {
                    requests.push(r);
                }
            }
        }
    }
    if let Some(path) = emit {
        write_atomic(&path, write_prompts_file(&requests).as_bytes())?;
        println!("{} prompts written to {}", requests.len(), path.display());
    }
    if let Some(path) = out_store {
        let scorer = inputs.scorer.as_ref().expect("scorer resolved");
        let sink = RecordStore::in_memory();
        let n = export_records(&requests, scorer, &sink)?;
        sink.write_canonical(&path)?;
        println!("{n} records written to {}", path.display());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let config = SyntheticConfig {
        beta_p: a.beta_p,
        beta_h: a.beta_h,
        signal: a.signal,
        peak_mass: a.peak_mass,
        num_labels: a.classes,
        n: a.n,
        seed: a.seed,
    };
    if let Err(e) = config.validate() {
        return usage(e.to_string());
    }
    let data = generate_synthetic(&config)?;
    data.write_to(&a.out)?;
    println!(
        "{} synthetic examples and {} records written to {}",
        data.examples.len(),
        data.store.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CliResult<()> {
    let mut reports = Vec::new();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join(RESULTS_FILE) } else { input.clone() };
        let results = read_results(&path)?;
        reports.extend(results.reports.into_iter().map(|r| r.into_report()));
    }
    let metric = match reports.first() {
        Some(r) => r.metric,
        None => return usage("no reports found"),
    };
    let rows = aggregate_robustness(&reports)?;
    let csv = aggregate_csv(metric, &rows);
    print!("{csv}");
    if let Some(out) = &a.out {
        write_atomic(out, csv.as_bytes())?;
    }
    Ok(())
}
