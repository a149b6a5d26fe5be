#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::backend::{parse_prompts_file, write_prompts_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(requests) = parse_prompts_file(text) {
        assert_eq!(parse_prompts_file(&write_prompts_file(&requests)).unwrap(), requests);
    }
});
