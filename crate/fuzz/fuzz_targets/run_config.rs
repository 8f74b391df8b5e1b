#![no_main]
use docqa::harness::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(text, "fuzz") {
            let _ = cfg.finalize();
        }
    }
});
