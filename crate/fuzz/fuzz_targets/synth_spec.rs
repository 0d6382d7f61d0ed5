#![no_main]

use clahi::synth::{generate, SynthSpec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = SynthSpec::from_toml(text) {
        if spec.events <= 20 && spec.max_posts <= 64 {
            let _ = generate(&spec);
        }
    }
});
