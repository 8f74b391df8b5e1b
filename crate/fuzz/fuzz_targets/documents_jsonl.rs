#![no_main]
use docqa::corpus::parse_documents_jsonl;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_documents_jsonl(text, "fuzz");
    }
});
