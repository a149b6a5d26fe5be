use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AggregateRow, BiasDiagnostics, EvalReport, FlipAccounting, MethodResult, RunOutcome, Settings};
use crate::error::Result;
use crate::eval::Metric;
use crate::io::write_atomic;

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

fn pct(v: f64) -> String {
    format!("{v:.4}")
}

fn opt_pct(v: Option<f64>) -> String {
    v.map(pct).unwrap_or_else(|| "n/a".into())
}

fn seed_str(seed: Option<u64>) -> String {
    seed.map(|s| s.to_string()).unwrap_or_default()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

/// One row per method and report.
pub fn summary_csv(reports: &[EvalReport]) -> String {
    let rows = reports
        .iter()
        .flat_map(|r| {
            r.results.iter().map(move |m| {
                vec![
                    r.task_id.clone(),
                    r.template_id.clone(),
                    r.split.clone(),
                    r.model_id.clone(),
                    r.n_shots.to_string(),
                    seed_str(r.seed),
                    m.method.to_string(),
                    r.metric.as_str().to_string(),
                    pct(m.value),
                    r.n_examples.to_string(),
                    m.ties.to_string(),
                ]
            })
        })
        .collect();
    csv_string(
        &[
            "task_id", "template_id", "split", "model_id", "n_shots", "seed", "method", "metric", "value",
            "n_examples", "ties",
        ],
        rows,
    )
}

pub fn aggregate_csv(metric: Metric, rows: &[AggregateRow]) -> String {
    csv_string(
        &["method", "metric", "mean", "std", "n_runs"],
        rows.iter()
            .map(|a| {
                vec![
                    a.method.to_string(),
                    metric.as_str().to_string(),
                    pct(a.mean),
                    pct(a.std),
                    a.n_runs.to_string(),
                ]
            })
            .collect(),
    )
}

/// Per-example triples, prompt hashes and every method's scores.
pub fn audit_csv(report: &EvalReport) -> String {
    let mut header: Vec<String> = [
        "index", "gold", "joint_hash", "premise_only_hash", "hypothesis_only_hash", "joint", "premise_only",
        "hypothesis_only",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for r in &report.results {
        header.push(format!("{}_scores", r.method));
        header.push(format!("{}_pred", r.method));
    }
    let rows = report
        .audit
        .iter()
        .map(|row| {
            let mut out = vec![
                row.index.to_string(),
                row.gold.to_string(),
                row.prompt_hashes[0].clone(),
                row.prompt_hashes[1].clone(),
                row.prompt_hashes[2].clone(),
                join(row.triple.joint.values()),
                join(row.triple.premise_only.values()),
                join(row.triple.hypothesis_only.values()),
            ];
            for o in &row.outputs {
                out.push(join(&o.scores));
                out.push(o.prediction.to_string());
            }
            out
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(&header, rows)
}

pub fn diagnostics_csv(d: &BiasDiagnostics) -> String {
    let n = d.n_examples.to_string();
    let e = d.joint_errors.to_string();
    csv_string(
        &["quantity", "value", "count"],
        vec![
            vec!["negative_label".into(), d.negative_label.clone(), n.clone()],
            vec!["premise_only_negative_pct".into(), pct(d.premise_only_negative_pct), n.clone()],
            vec!["hypothesis_only_negative_pct".into(), pct(d.hypothesis_only_negative_pct), n],
            vec!["premise_alignment_pct".into(), opt_pct(d.premise_alignment_pct), e.clone()],
            vec!["hypothesis_alignment_pct".into(), opt_pct(d.hypothesis_alignment_pct), e],
        ],
    )
}

pub fn flips_csv(flips: &[FlipAccounting]) -> String {
    csv_string(
        &[
            "method",
            "original_errors",
            "corrected",
            "changed_but_wrong",
            "newly_broken",
            "corrected_pct",
            "broken_pct",
        ],
        flips
            .iter()
            .map(|f| {
                vec![
                    f.method.to_string(),
                    f.original_errors.to_string(),
                    f.corrected.to_string(),
                    f.changed_but_wrong.to_string(),
                    f.newly_broken.to_string(),
                    opt_pct(f.corrected_pct),
                    opt_pct(f.broken_pct),
                ]
            })
            .collect(),
    )
}

pub fn markdown_summary(outcome: &RunOutcome) -> String {
    let mut out = String::new();
    let Some(first) = outcome.reports.first() else {
        return out;
    };
    out.push_str(&format!(
        "# {}/{} ({} split, {})\n\n",
        first.task_id, first.template_id, first.split, first.model_id
    ));
    out.push_str(&format!(
        "Metric: {}. Shots: {}. Examples: {}.\n\n",
        first.metric.as_str(),
        first.n_shots,
        first.n_examples
    ));
    out.push_str("| run | method | value |\n|---|---|---|\n");
    for r in &outcome.reports {
        let run = r.seed.map(|s| format!("seed {s}")).unwrap_or_else(|| "zero-shot".into());
        for m in &r.results {
            out.push_str(&format!("| {run} | {} | {} |\n", m.method, pct(m.value)));
        }
    }
    if let Some(agg) = &outcome.aggregate {
        out.push_str("\n| method | mean | std | runs |\n|---|---|---|---|\n");
        for a in agg {
            out.push_str(&format!("| {} | {} | {} | {} |\n", a.method, pct(a.mean), pct(a.std), a.n_runs));
        }
    }
    for r in &outcome.reports {
        let d = &r.diagnostics;
        let run = r.seed.map(|s| format!(" (seed {s})")).unwrap_or_default();
        out.push_str(&format!("\n## Bias diagnostics{run}\n\n"));
        out.push_str(&format!(
            "- premise-only predicts `{}`: {}%\n- hypothesis-only predicts `{}`: {}%\n",
            d.negative_label,
            pct(d.premise_only_negative_pct),
            d.negative_label,
            pct(d.hypothesis_only_negative_pct)
        ));
        out.push_str(&format!(
            "- joint errors: {}; aligned with premise-only: {}; with hypothesis-only: {}\n",
            d.joint_errors,
            opt_pct(d.premise_alignment_pct),
            opt_pct(d.hypothesis_alignment_pct)
        ));
        for f in &r.flips {
            out.push_str(&format!(
                "- {} vs original: corrected {}%, changed but wrong {}%, newly broken {}\n",
                f.method,
                opt_pct(f.corrected_pct),
                opt_pct(f.broken_pct),
                f.newly_broken
            ));
        }
    }
    let s = &first.settings;
    out.push_str("\n## Settings\n\n");
    out.push_str(&format!("- eps: {}\n- scoring rule: {:?}\n", s.eps, s.scoring_rule));
    out.push_str(&format!("- missing slot: {}\n", s.missing_slot_rule));
    out.push_str(&format!("- macro-F1: {}\n", s.macro_f1_convention));
    out.push_str(&format!("- ties: {}\n", s.tie_rule));
    out
}

/// Everything in a report except the per-example audit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub task_id: String,
    pub template_id: String,
    pub split: String,
    pub model_id: String,
    pub metric: Metric,
    pub n_shots: usize,
    pub seed: Option<u64>,
    pub n_examples: usize,
    pub results: Vec<MethodResult>,
    pub diagnostics: BiasDiagnostics,
    pub flips: Vec<FlipAccounting>,
    pub settings: Settings,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            task_id: r.task_id.clone(),
            template_id: r.template_id.clone(),
            split: r.split.clone(),
            model_id: r.model_id.clone(),
            metric: r.metric,
            n_shots: r.n_shots,
            seed: r.seed,
            n_examples: r.n_examples,
            results: r.results.clone(),
            diagnostics: r.diagnostics.clone(),
            flips: r.flips.clone(),
            settings: r.settings.clone(),
        }
    }
}

impl ReportSummary {
    /// Stand-in report without audit rows, for aggregation.
    pub fn into_report(self) -> EvalReport {
        EvalReport {
            task_id: self.task_id,
            template_id: self.template_id,
            split: self.split,
            model_id: self.model_id,
            metric: self.metric,
            n_shots: self.n_shots,
            seed: self.seed,
            n_examples: self.n_examples,
            results: self.results,
            audit: Vec::new(),
            diagnostics: self.diagnostics,
            flips: self.flips,
            settings: self.settings,
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ResultsFile {
    pub spec: super::RunSpec,
    pub config: serde_json::Value,
    pub reports: Vec<ReportSummary>,
    pub aggregate: Option<Vec<AggregateRow>>,
}

pub const RESULTS_FILE: &str = "results.json";

fn suffix(r: &EvalReport) -> String {
    r.seed.map(|s| format!("_seed{s}")).unwrap_or_default()
}

/// Renders every output file, then writes each atomically into `dir`.
/// `config` is the effective configuration echoed into `results.json`.
pub fn write_outcome(dir: &Path, outcome: &RunOutcome, config: &serde_json::Value) -> Result<Vec<String>> {
    let mut files: Vec<(String, String)> = vec![
        ("summary.csv".into(), summary_csv(&outcome.reports)),
        ("summary.md".into(), markdown_summary(outcome)),
    ];
    if let (Some(agg), Some(first)) = (&outcome.aggregate, outcome.reports.first()) {
        files.push(("aggregate.csv".into(), aggregate_csv(first.metric, agg)));
    }
    for r in &outcome.reports {
        let s = suffix(r);
        files.push((format!("audit{s}.csv"), audit_csv(r)));
        files.push((format!("diagnostics{s}.csv"), diagnostics_csv(&r.diagnostics)));
        files.push((format!("flips{s}.csv"), flips_csv(&r.flips)));
    }
    let results = ResultsFile {
        spec: outcome.spec.clone(),
        config: config.clone(),
        reports: outcome.reports.iter().map(ReportSummary::from).collect(),
        aggregate: outcome.aggregate.clone(),
    };
    let mut json = serde_json::to_string_pretty(&results).expect("results serialize");
    json.push('\n');
    files.push((RESULTS_FILE.into(), json));
    for (name, content) in &files {
        write_atomic(&dir.join(name), content.as_bytes())?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::error::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| crate::error::Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })
}
