#![no_main]
use docqa::layers::WordVectors;
use libfuzzer_sys::fuzz_target;

// Accepted tables survive a write and re-read unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(wv) = WordVectors::<f64>::parse(text, "fuzz", None) else {
        return;
    };
    let again = WordVectors::<f64>::parse(&wv.to_text(), "fuzz", Some(wv.dim()))
        .expect("round trip parses");
    assert_eq!(again.checksum(), wv.checksum());
});
