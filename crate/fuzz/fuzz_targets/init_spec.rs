#![no_main]

use libfuzzer_sys::fuzz_target;
use torific::flow::InitSpec;

// Inputs that are not `zero` or `bump:EPS` are read as file paths; only the
// in-memory forms are exercised here.
fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let t = s.trim();
        if t == "zero" || t.starts_with("bump:") {
            let _ = InitSpec::parse(s);
        }
    }
});
