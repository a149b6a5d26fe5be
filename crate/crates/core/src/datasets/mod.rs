//! Dataset manifests and example ingestion.
//!
//! A manifest is a TOML document describing where a task's split files live
//! and how their columns and label strings map onto [`Example`]s:
//!
//! ```toml
//! task_id = "rte"
//! format = "tsv"
//!
//! [field_map]
//! premise = "sentence1"
//! hypothesis = "sentence2"
//! label = "label"
//!
//! [label_map]
//! entailment = 0
//! not_entailment = 1
//!
//! [splits]
//! validation = "RTE/dev.tsv"
//!
//! [expected_counts]
//! validation = 277
//! ```
//!
//! Relative split paths resolve against the manifest's directory.

mod synthetic;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use synthetic::{
    generate_synthetic, synthetic_schema, SyntheticConfig, SyntheticData, EXAMPLES_FILE, RECORDS_FILE,
    SYNTHETIC_DC_SEED, SYNTHETIC_MODEL_ID, SYNTHETIC_TASK_ID, TEMPLATES_FILE,
};

use crate::error::{Error, Result};
use crate::prompting::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Tsv,
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMap {
    pub premise: String,
    #[serde(default)]
    pub hypothesis: Option<String>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task_id: String,
    pub format: DataFormat,
    /// Delimited files start with a header row naming the columns. Without
    /// one, field names are zero-based column indices.
    #[serde(default = "yes")]
    pub has_header: bool,
    pub field_map: FieldMap,
    /// Fixed hypothesis for single-text tasks recast as inference.
    #[serde(default)]
    pub hypothesis_text: Option<String>,
    pub label_map: BTreeMap<String, usize>,
    pub splits: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub expected_counts: BTreeMap<String, usize>,
    /// Splits evaluated by default. When empty, `validation` if present,
    /// else `test`.
    #[serde(default)]
    pub eval_splits: Vec<String>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn yes() -> bool {
    true
}

impl DatasetManifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let manifest: DatasetManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.message().to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::from_toml_str(&text)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.field_map.hypothesis.is_none() && self.hypothesis_text.is_none() {
            return Err(Error::Manifest(
                "field_map.hypothesis or hypothesis_text must be given".into(),
            ));
        }
        if self.field_map.hypothesis.is_some() && self.hypothesis_text.is_some() {
            return Err(Error::Manifest(
                "field_map.hypothesis and hypothesis_text are mutually exclusive".into(),
            ));
        }
        if let Some(s) = self.eval_splits.iter().find(|s| !self.splits.contains_key(*s)) {
            return Err(Error::Manifest(format!("eval split `{s}` is not listed under [splits]")));
        }
        if self.label_map.is_empty() {
            return Err(Error::Manifest("label_map is empty".into()));
        }
        if !self.has_header && self.format != DataFormat::Jsonl {
            for name in self.field_names() {
                if name.parse::<usize>().is_err() {
                    return Err(Error::Manifest(format!(
                        "headerless files need numeric column indices, got `{name}`"
                    )));
                }
            }
        }
        Ok(())
    }

    fn field_names(&self) -> impl Iterator<Item = &str> {
        [Some(&self.field_map.premise), self.field_map.hypothesis.as_ref(), Some(&self.field_map.label)]
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    pub fn default_eval_splits(&self) -> Vec<String> {
        if !self.eval_splits.is_empty() {
            return self.eval_splits.clone();
        }
        ["validation", "test"]
            .iter()
            .find(|s| self.splits.contains_key(**s))
            .map(|s| vec![s.to_string()])
            .or_else(|| self.splits.keys().next().map(|s| vec![s.clone()]))
            .unwrap_or_default()
    }

    pub fn split_path(&self, split: &str) -> Result<PathBuf> {
        let rel = self
            .splits
            .get(split)
            .ok_or_else(|| Error::Manifest(format!("task {} has no split `{split}`", self.task_id)))?;
        Ok(if rel.is_absolute() { rel.clone() } else { self.base_dir.join(rel) })
    }

    fn map_label(&self, raw: &str, row: usize) -> Result<usize> {
        self.label_map.get(raw.trim()).copied().ok_or_else(|| Error::LabelMap {
            row,
            label: raw.to_string(),
        })
    }

    fn make_example(&self, premise: String, hypothesis: Option<String>, label: &str, row: usize) -> Result<Example> {
        let hypothesis = match (hypothesis, &self.hypothesis_text) {
            (Some(h), _) => h,
            (None, Some(fixed)) => fixed.clone(),
            (None, None) => String::new(),
        };
        if premise.trim().is_empty() && hypothesis.trim().is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "premise and hypothesis are both empty".into(),
            });
        }
        Ok(Example::new(premise, hypothesis, Some(self.map_label(label, row)?)))
    }
}

/// Parses one split's contents in file order.
pub fn read_examples(manifest: &DatasetManifest, reader: impl Read) -> Result<Vec<Example>> {
    match manifest.format {
        DataFormat::Jsonl => read_jsonl(manifest, reader),
        DataFormat::Tsv => read_delimited(manifest, reader, b'\t', false),
        DataFormat::Csv => read_delimited(manifest, reader, b',', true),
    }
}

fn read_delimited(manifest: &DatasetManifest, reader: impl Read, delimiter: u8, quoting: bool) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(quoting)
        .has_headers(manifest.has_header)
        .flexible(true)
        .from_reader(reader);

    let column = |name: &str, headers: Option<&csv::StringRecord>| -> Result<usize> {
        match headers {
            Some(h) => h
                .iter()
                .position(|c| c.trim() == name)
                .ok_or_else(|| Error::Manifest(format!("column `{name}` not found in header"))),
            None => name
                .parse()
                .map_err(|_| Error::Manifest(format!("column index `{name}` is not a number"))),
        }
    };
    let headers = if manifest.has_header {
        Some(rdr.headers().map_err(|e| Error::MalformedRow { row: 1, reason: e.to_string() })?.clone())
    } else {
        None
    };
    let premise_col = column(&manifest.field_map.premise, headers.as_ref())?;
    let hypothesis_col = manifest
        .field_map
        .hypothesis
        .as_deref()
        .map(|h| column(h, headers.as_ref()))
        .transpose()?;
    let label_col = column(&manifest.field_map.label, headers.as_ref())?;

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let fallback_row = i + 1 + usize::from(manifest.has_header);
        let record = record.map_err(|e| Error::MalformedRow {
            row: e.position().map(|p| p.line() as usize).unwrap_or(fallback_row),
            reason: e.to_string(),
        })?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(fallback_row);
        let field = |col: usize| -> Result<String> {
            record.get(col).map(str::to_string).ok_or_else(|| Error::MalformedRow {
                row,
                reason: format!("missing column {col} ({} fields)", record.len()),
            })
        };
        let premise = field(premise_col)?;
        let hypothesis = hypothesis_col.map(field).transpose()?;
        let label = field(label_col)?;
        out.push(manifest.make_example(premise, hypothesis, &label, row)?);
    }
    Ok(out)
}

fn json_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str, row: usize) -> Result<String> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(v @ (serde_json::Value::Number(_) | serde_json::Value::Bool(_))) => Ok(v.to_string()),
        Some(other) => Err(Error::MalformedRow {
            row,
            reason: format!("field `{key}` has unsupported value {other}"),
        }),
        None => Err(Error::MalformedRow {
            row,
            reason: format!("missing field `{key}`"),
        }),
    }
}

fn read_jsonl(manifest: &DatasetManifest, reader: impl Read) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::MalformedRow { row, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow { row, reason: e.to_string() })?;
        let obj = value.as_object().ok_or_else(|| Error::MalformedRow {
            row,
            reason: "expected a JSON object".into(),
        })?;
        let premise = json_field(obj, &manifest.field_map.premise, row)?;
        let hypothesis = manifest
            .field_map
            .hypothesis
            .as_deref()
            .map(|h| json_field(obj, h, row))
            .transpose()?;
        let label = json_field(obj, &manifest.field_map.label, row)?;
        out.push(manifest.make_example(premise, hypothesis, &label, row)?);
    }
    Ok(out)
}

/// Loads a split, checking its size against `expected_counts` when given.
pub fn load_split(manifest: &DatasetManifest, split: &str) -> Result<Vec<Example>> {
    let path = manifest.split_path(split)?;
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let examples = read_examples(manifest, file)?;
    if let Some(&expected) = manifest.expected_counts.get(split) {
        if expected != examples.len() {
            return Err(Error::CountMismatch {
                split: split.to_string(),
                expected,
                actual: examples.len(),
            });
        }
    }
    Ok(examples)
}

/// Plain example files: one `{"premise", "hypothesis", "label"}` object per line.
pub fn examples_to_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn examples_from_jsonl(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::MalformedRow {
            row: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_examples_file(path: &Path) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    examples_from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RTE_MANIFEST: &str = r#"
task_id = "rte"
format = "tsv"

[field_map]
premise = "sentence1"
hypothesis = "sentence2"
label = "label"

[label_map]
entailment = 0
not_entailment = 1

[splits]
validation = "dev.tsv"

[expected_counts]
validation = 2
"#;

    fn manifest() -> DatasetManifest {
        DatasetManifest::from_toml_str(RTE_MANIFEST).unwrap()
    }

    #[test]
    fn reads_glue_style_tsv() {
        let tsv = "index\tsentence1\tsentence2\tlabel\n0\tA \"quoted\tB\tentailment\n1\tC\tD\tnot_entailment\n";
        let ex = read_examples(&manifest(), tsv.as_bytes()).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0], Example::new("A \"quoted", "B", Some(0)));
        assert_eq!(ex[1].gold_label, Some(1));
    }

    #[test]
    fn unmapped_label_names_the_row() {
        let tsv = "index\tsentence1\tsentence2\tlabel\n0\tA\tB\tentailment\n1\tC\tD\tcontradiction\n";
        match read_examples(&manifest(), tsv.as_bytes()) {
            Err(Error::LabelMap { row, label }) => {
                assert_eq!(row, 3);
                assert_eq!(label, "contradiction");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_is_reported() {
        let tsv = "index\tsentence1\tsentence2\tlabel\n0\tA\tB\tentailment\n1\tC\n";
        assert!(matches!(
            read_examples(&manifest(), tsv.as_bytes()),
            Err(Error::MalformedRow { row: 3, .. })
        ));
        let jsonl_manifest = DatasetManifest {
            format: DataFormat::Jsonl,
            ..manifest()
        };
        let jsonl = "{\"sentence1\":\"A\",\"sentence2\":\"B\",\"label\":\"entailment\"}\n{\"sentence1\":\"A\"\n";
        assert!(matches!(
            read_examples(&jsonl_manifest, jsonl.as_bytes()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn count_mismatch_and_success() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.toml"), RTE_MANIFEST).unwrap();
        std::fs::write(
            dir.path().join("dev.tsv"),
            "index\tsentence1\tsentence2\tlabel\n0\tA\tB\tentailment\n",
        )
        .unwrap();
        let m = DatasetManifest::load(&dir.path().join("m.toml")).unwrap();
        assert!(matches!(
            load_split(&m, "validation"),
            Err(Error::CountMismatch { expected: 2, actual: 1, .. })
        ));
        std::fs::write(
            dir.path().join("dev.tsv"),
            "index\tsentence1\tsentence2\tlabel\n0\tA\tB\tentailment\n1\tC\tD\tnot_entailment\n",
        )
        .unwrap();
        assert_eq!(load_split(&m, "validation").unwrap().len(), 2);
        assert!(load_split(&m, "train").is_err());
    }

    #[test]
    fn jsonl_with_numeric_labels_and_fixed_hypothesis() {
        let m = DatasetManifest::from_toml_str(
            r#"
task_id = "hatespeech18"
format = "jsonl"
hypothesis_text = "the text expresses hate speech."
[field_map]
premise = "text"
label = "label"
[label_map]
"1" = 0
"0" = 1
[splits]
test = "test.jsonl"
"#,
        )
        .unwrap();
        let ex = read_examples(&m, "{\"text\":\"x\",\"label\":1}\n\n{\"text\":\"y\",\"label\":0}\n".as_bytes()).unwrap();
        assert_eq!(ex[0], Example::new("x", "the text expresses hate speech.", Some(0)));
        assert_eq!(ex[1].gold_label, Some(1));
    }

    #[test]
    fn csv_and_headerless() {
        let m = DatasetManifest::from_toml_str(
            r#"
task_id = "t"
format = "csv"
has_header = false
[field_map]
premise = "0"
hypothesis = "1"
label = "2"
[label_map]
favor = 0
against = 1
[splits]
test = "t.csv"
"#,
        )
        .unwrap();
        let ex = read_examples(&m, "\"a, b\",c,favor\nd,e,against\n".as_bytes()).unwrap();
        assert_eq!(ex[0].premise, "a, b");
        assert_eq!(ex[1].gold_label, Some(1));
    }

    #[test]
    fn manifest_validation() {
        assert!(DatasetManifest::from_toml_str("task_id = 1").is_err());
        let no_hyp = RTE_MANIFEST.replace("hypothesis = \"sentence2\"\n", "");
        assert!(matches!(DatasetManifest::from_toml_str(&no_hyp), Err(Error::Manifest(_))));
    }

    #[test]
    fn jsonl_examples_round_trip() {
        let ex = vec![Example::new("a\tb", "c\"d", Some(2)), Example::new("e", "f", None)];
        assert_eq!(examples_from_jsonl(&examples_to_jsonl(&ex)).unwrap(), ex);
    }
}
