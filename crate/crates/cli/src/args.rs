use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "taskcal", version, about = "Task-calibrated zero-shot evaluation of prompted classifiers")]
pub struct Cli {
    /// TOML file supplying values for any run flag; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate methods on a task and write reports.
    Run(RunArgs),
    /// Write the premise-only / hypothesis-only bias diagnostics.
    Diagnose(RunArgs),
    /// Emit the prompts a run needs, or fetch them into a record store.
    Export(ExportArgs),
    /// Generate a synthetic stream with a planted single-component bias.
    Synth(SynthArgs),
    /// Mean and standard deviation across finished runs.
    Compare(CompareArgs),
}

/// Flags shared by `run`, `diagnose` and `export`. Every field may also be
/// set in the config file under the same (snake_case) name.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub template: Option<String>,
    /// Comma-separated, e.g. `original,tc,bc+tc`.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// `offline` or `http`.
    #[arg(long)]
    pub backend: Option<String>,
    /// Record store file, or a directory holding records.jsonl plus
    /// optional examples.jsonl, train.jsonl and templates.toml.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory the manifest's split paths are relative to.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Evaluation examples as JSONL, bypassing the manifest.
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// Demonstration pool as JSONL.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Extra template registry merged over the built-in one.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// `sum` or `mean_per_token`.
    #[arg(long)]
    pub scoring_rule: Option<String>,
    #[arg(long)]
    pub dc_seed: Option<u64>,
    /// Evaluate only the first N examples of each split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! prefer {
    ($a:expr, $b:expr, $($f:ident),*) => {
        RunArgs { $($f: $a.$f.or($b.$f)),* }
    };
}

impl RunArgs {
    /// Fields set in `self` win over those in `fallback`.
    pub fn or(self, fallback: RunArgs) -> RunArgs {
        prefer!(
            self, fallback, task, template, methods, shots, seeds, backend, store, endpoint, api_key_env, model,
            max_in_flight, timeout_ms, max_attempts, backoff_ms, manifest, data_dir, split, examples, train,
            templates, eps, scoring_rule, dc_seed, limit, out
        )
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Write the prompts file for an external exporter instead of scoring.
    #[arg(long, conflicts_with = "out_store")]
    pub emit_prompts: Option<PathBuf>,
    /// Score every prompt through the backend and write the records here.
    #[arg(long)]
    pub out_store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0.0)]
    pub beta_p: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta_h: f64,
    #[arg(long, default_value_t = 0.4)]
    pub signal: f64,
    #[arg(long, default_value_t = 0.9)]
    pub peak_mass: f64,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output directories of earlier runs (or their results.json files).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Write the comparison CSV here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
