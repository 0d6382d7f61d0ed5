#![no_main]

use clahi::cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        if let Ok(again) = cfg.to_toml() {
            assert!(RunConfig::from_toml(&again).is_ok());
        }
    }
});
