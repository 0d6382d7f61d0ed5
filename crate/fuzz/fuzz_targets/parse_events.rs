#![no_main]

use clahi::conversation::format::{parse_str, write_str};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(events) = parse_str(text) {
        // accepted input re-serializes to an equal corpus
        let again = parse_str(&write_str(&events)).expect("round trip");
        assert_eq!(again, events);
    }
});
