#![no_main]
use docqa::inference::parse_predictions_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_predictions_jsonl(text, "fuzz");
    }
});
