#![no_main]
use docqa::training::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = Checkpoint::<f32>::parse(text, "fuzz");
        let _ = Checkpoint::<f64>::parse(text, "fuzz");
    }
});
