#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::backend::{LogprobRecord, RecordStore};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(record) = LogprobRecord::from_line(text, 1) {
        assert_eq!(LogprobRecord::from_line(&record.to_line(), 1).unwrap(), record);
    }
    if let Ok(store) = RecordStore::parse(text) {
        let canonical = store.to_canonical_string();
        let again = RecordStore::parse(&canonical).unwrap();
        assert_eq!(again.to_canonical_string(), canonical);
    }
});
