#![no_main]

use std::collections::BTreeSet;

use clahi::encoder::EmbeddingTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&dim, body)) = data.split_first() else { return };
    let vocab: BTreeSet<String> = ["the", "fake", "news", "<unk>"].iter().map(|s| s.to_string()).collect();
    if let Ok(table) = EmbeddingTable::read(body, &vocab, (dim % 8) as usize + 1, 7) {
        assert!(table.matrix().is_finite());
        let again = EmbeddingTable::read(table.to_text().as_bytes(), &vocab, table.dim(), 7).expect("round trip");
        assert_eq!(again.matrix(), table.matrix());
    }
});
