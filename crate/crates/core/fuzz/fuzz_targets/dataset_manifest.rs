#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::datasets::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = DatasetManifest::from_toml_str(text) {
        for split in m.default_eval_splits() {
            let _ = m.split_path(&split);
        }
    }
});
