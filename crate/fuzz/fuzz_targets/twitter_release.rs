#![no_main]

use clahi::conversation::twitter::{convert_tree, parse_labels, parse_source_tweets};
use clahi::conversation::Label;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_labels(text);
    let _ = parse_source_tweets(text);
    if let Ok(event) = convert_tree("100", Label::FalseRumor, "claim", text) {
        assert!(!event.is_empty());
    }
});
