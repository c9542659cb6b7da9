#![no_main]

use libfuzzer_sys::fuzz_target;
use thingsyntax::grammar::{parse_statement, render_statement};

// First byte picks B; the rest is the statement text.
fuzz_target!(|data: &[u8]| {
    let Some((&b, rest)) = data.split_first() else { return };
    let bins = 2 + (b as usize % 10);
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(s) = parse_statement(text, bins) {
        let rendered = render_statement(&s, bins);
        assert_eq!(parse_statement(&rendered, bins).ok(), Some(s));
    }
});
