#![no_main]

use libfuzzer_sys::fuzz_target;
use thingsyntax::io::{parse_windows_line, LoadOptions};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(Some((record, _))) = parse_windows_line(text, 1, &LoadOptions::default()) {
        let _ = record.syntax(None);
        let line = serde_json::to_string(&record).unwrap();
        let again = parse_windows_line(&line, 1, &LoadOptions::default()).unwrap();
        assert_eq!(again.map(|(r, _)| r), Some(record));
    }
});
