#![no_main]

use clahi::conversation::{Cutoff, Label, StructureVariant};
use clahi::model::{parse_attention_tsv, parse_beta_tsv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_attention_tsv(text);
    let _ = parse_beta_tsv(text);
    for field in text.split(',') {
        if let Ok(cut) = field.parse::<Cutoff>() {
            assert_eq!(cut.to_string().parse::<Cutoff>().ok(), Some(cut));
        }
        let _ = field.parse::<Label>();
        let _ = field.parse::<StructureVariant>();
    }
});
