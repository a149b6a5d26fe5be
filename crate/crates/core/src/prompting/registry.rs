use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TaskSchema;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::prob::LabelSpace;

const BUILTIN: &str = include_str!("../../templates/builtin.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Nli,
    Stance,
    Paraphrase,
    /// Single-text classification recast as inference against a fixed claim.
    Nlu,
}

impl TaskType {
    pub fn default_metric(self) -> Metric {
        match self {
            TaskType::Stance => Metric::MacroF1,
            _ => Metric::Accuracy,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    task_id: String,
    #[serde(default = "main_id")]
    template_id: String,
    task_type: TaskType,
    template: String,
    answer_cue: String,
    labels: Vec<String>,
    verbalizers: Option<Vec<String>>,
    metric: Option<Metric>,
    domain_string: Option<String>,
    negative_label: Option<String>,
}

fn main_id() -> String {
    "main".to_string()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryDoc {
    #[serde(default)]
    schema: Vec<SchemaDoc>,
}

impl SchemaDoc {
    fn into_schema(self) -> Result<TaskSchema> {
        let verbalizers = self.verbalizers.unwrap_or_else(|| self.labels.clone());
        let label_space = LabelSpace::new(self.labels, verbalizers).map_err(|e| Error::Schema {
            task_id: self.task_id.clone(),
            reason: e.to_string(),
        })?;
        let schema = TaskSchema {
            metric: self.metric.unwrap_or(self.task_type.default_metric()),
            domain_string: self.domain_string.unwrap_or_else(|| self.answer_cue.clone()),
            task_id: self.task_id,
            template_id: self.template_id,
            task_type: self.task_type,
            template: self.template,
            answer_cue: self.answer_cue,
            label_space,
            negative_label: self.negative_label,
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// Task schemas keyed by `(task_id, template_id)`.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    schemas: BTreeMap<(String, String), TaskSchema>,
}

impl TemplateRegistry {
    /// The shipped main and robustness templates.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN).expect("built-in template registry is valid")
    }

    /// Parses a registry document: a TOML file holding one `[[schema]]`
    /// table per task template.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: RegistryDoc = toml::from_str(text).map_err(|e| Error::Parse {
            line: toml_line(text, e.span()),
            reason: e.message().to_string(),
        })?;
        let mut registry = Self::default();
        for raw in doc.schema {
            registry.insert(raw.into_schema()?);
        }
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Later definitions replace earlier ones with the same key.
    pub fn insert(&mut self, schema: TaskSchema) {
        self.schemas
            .insert((schema.task_id.clone(), schema.template_id.clone()), schema);
    }

    pub fn merge(&mut self, other: TemplateRegistry) {
        self.schemas.extend(other.schemas);
    }

    pub fn get(&self, task_id: &str, template_id: &str) -> Result<&TaskSchema> {
        self.schemas
            .get(&(task_id.to_string(), template_id.to_string()))
            .ok_or_else(|| Error::UnknownTemplate(format!("{task_id}/{template_id}")))
    }

    pub fn templates_for<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = &'a TaskSchema> + 'a {
        self.schemas.values().filter(move |s| s.task_id == task_id)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &TaskSchema> {
        self.schemas.values()
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn to_toml_string(&self) -> String {
        let doc = RegistryOut {
            schema: self
                .schemas
                .values()
                .map(|s| SchemaOut {
                    task_id: &s.task_id,
                    template_id: &s.template_id,
                    task_type: s.task_type,
                    template: &s.template,
                    answer_cue: &s.answer_cue,
                    labels: s.label_space.labels(),
                    verbalizers: s.label_space.verbalizers(),
                    metric: s.metric,
                    domain_string: &s.domain_string,
                    negative_label: s.negative_label.as_deref(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("registry serializes")
    }
}

#[derive(Serialize)]
struct RegistryOut<'a> {
    schema: Vec<SchemaOut<'a>>,
}

#[derive(Serialize)]
struct SchemaOut<'a> {
    task_id: &'a str,
    template_id: &'a str,
    task_type: TaskType,
    template: &'a str,
    answer_cue: &'a str,
    labels: &'a [String],
    verbalizers: &'a [String],
    metric: Metric,
    domain_string: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    negative_label: Option<&'a str>,
}

fn toml_line(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map(|r| text.get(..r.start).unwrap_or(text).matches('\n').count() + 1)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_covers_main_and_robustness_sets() {
        let reg = TemplateRegistry::builtin();
        for task in [
            "rte", "wnli", "scitail", "cb", "mnli", "qnli", "perspectrum", "ibm30k", "ezstance", "iam", "vast", "paws",
            "qqp", "sst2", "offenseval", "hateval", "hatespeech18",
        ] {
            reg.get(task, "main").unwrap();
        }
        for task in ["rte", "cb", "vast", "paws"] {
            for id in ["r1", "r2", "r3", "r4", "r5"] {
                reg.get(task, id).unwrap();
            }
            assert_eq!(reg.templates_for(task).count(), 6);
        }
    }

    #[test]
    fn metric_follows_task_type() {
        let reg = TemplateRegistry::builtin();
        assert_eq!(reg.get("vast", "main").unwrap().metric, Metric::MacroF1);
        assert_eq!(reg.get("iam", "main").unwrap().metric, Metric::MacroF1);
        assert_eq!(reg.get("rte", "main").unwrap().metric, Metric::Accuracy);
        assert_eq!(reg.get("paws", "main").unwrap().metric, Metric::Accuracy);
    }

    #[test]
    fn binary_tasks_drop_the_neutral_label() {
        let reg = TemplateRegistry::builtin();
        assert_eq!(reg.get("perspectrum", "main").unwrap().num_labels(), 2);
        assert_eq!(reg.get("vast", "main").unwrap().num_labels(), 3);
        assert_eq!(reg.get("cb", "main").unwrap().num_labels(), 3);
        assert_eq!(reg.get("rte", "r5").unwrap().label_space.labels(), ["yes", "no"]);
    }

    #[test]
    fn serialization_round_trips() {
        let reg = TemplateRegistry::builtin();
        let again = TemplateRegistry::from_toml_str(&reg.to_toml_string()).unwrap();
        assert_eq!(reg.len(), again.len());
        for s in reg.schemas.values() {
            assert_eq!(again.get(&s.task_id, &s.template_id).unwrap(), s);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        let missing_slot = r#"
[[schema]]
task_id = "x"
task_type = "nli"
template = "{premise} is. true or false? Answer:"
answer_cue = "true or false? Answer:"
labels = ["true", "false"]
"#;
        assert!(matches!(TemplateRegistry::from_toml_str(missing_slot), Err(Error::Schema { .. })));

        let stance_with_accuracy = r#"
[[schema]]
task_id = "x"
task_type = "stance"
metric = "accuracy"
template = "{premise} on {hypothesis}? favor or against? Answer:"
answer_cue = "favor or against? Answer:"
labels = ["favor", "against"]
"#;
        assert!(TemplateRegistry::from_toml_str(stance_with_accuracy).is_err());

        let wrong_cue = r#"
[[schema]]
task_id = "x"
task_type = "nli"
template = "{premise} entails {hypothesis}. true or false? Answer:"
answer_cue = "yes or no? Answer:"
labels = ["true", "false"]
"#;
        assert!(TemplateRegistry::from_toml_str(wrong_cue).is_err());

        let err = TemplateRegistry::from_toml_str("[[schema]]\ntask_id = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
