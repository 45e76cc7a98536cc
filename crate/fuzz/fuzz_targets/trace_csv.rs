#![no_main]

use libfuzzer_sys::fuzz_target;
use torific::trace::{parse_csv, to_csv_string};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_csv(data) {
        let again = parse_csv(to_csv_string(&rows).as_bytes()).unwrap();
        assert_eq!(again.len(), rows.len());
    }
});
