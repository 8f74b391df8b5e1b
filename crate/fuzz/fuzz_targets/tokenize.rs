#![no_main]
use docqa::text::{f1_score, normalize_answer, tokenize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let t = tokenize(text);
    assert!(t.validate());
    let n = normalize_answer(text);
    assert_eq!(normalize_answer(&n), n);
    let f1 = f1_score(text, &[n]);
    assert!((0.0..=1.0).contains(&f1));
});
