#![no_main]

use libfuzzer_sys::fuzz_target;
use thingsyntax::io::labelme_to_record;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((record, _)) = labelme_to_record(text, Some("img"), None) {
        for b in &record.boxes {
            assert!(b.w > 0.0 && b.h > 0.0);
            assert!(b.x >= 0.0 && b.y >= 0.0);
            assert!(b.x + b.w <= record.width as f64 + 1e-6);
            assert!(b.y + b.h <= record.height as f64 + 1e-6);
        }
    }
});
