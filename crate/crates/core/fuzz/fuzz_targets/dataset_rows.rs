#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::datasets::{read_examples, DatasetManifest};

const TSV: &str = r#"
task_id = "t"
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
"#;

const CSV: &str = r#"
task_id = "t"
format = "csv"
has_header = false
hypothesis_text = "fixed claim."
[field_map]
premise = "0"
label = "1"
[label_map]
"0" = 0
"1" = 1
[splits]
validation = "dev.csv"
"#;

const JSONL: &str = r#"
task_id = "t"
format = "jsonl"
[field_map]
premise = "premise"
hypothesis = "hypothesis"
label = "label"
[label_map]
entailment = 0
contradiction = 1
neutral = 2
[splits]
validation = "val.jsonl"
"#;

// The first byte picks the manifest; the rest is the split file.
fuzz_target!(|data: &[u8]| {
    let Some((&which, body)) = data.split_first() else { return };
    let manifest = match which % 3 {
        0 => TSV,
        1 => CSV,
        _ => JSONL,
    };
    let m = DatasetManifest::from_toml_str(manifest).unwrap();
    if let Ok(examples) = read_examples(&m, body) {
        assert!(examples.iter().all(|e| e.gold_label.is_some_and(|g| g < m.label_map.len())));
    }
});
