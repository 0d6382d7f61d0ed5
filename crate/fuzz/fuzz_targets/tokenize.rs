#![no_main]

use clahi::encoder::tokenize;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&cap, body)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(body) else { return };
    let cap = cap as usize % 64 + 1;
    let tokens = tokenize(text, cap);
    assert!(!tokens.is_empty() && tokens.len() <= cap);
});
