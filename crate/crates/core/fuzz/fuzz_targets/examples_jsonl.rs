#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::datasets::{examples_from_jsonl, examples_to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(examples) = examples_from_jsonl(text) {
        assert_eq!(examples_from_jsonl(&examples_to_jsonl(&examples)).unwrap(), examples);
    }
});
