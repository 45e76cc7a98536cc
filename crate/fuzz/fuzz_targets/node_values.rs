#![no_main]

use libfuzzer_sys::fuzz_target;
use torific::flow::parse_node_values;

fuzz_target!(|data: &[u8]| {
    if let Ok(values) = parse_node_values(data) {
        assert!(values.iter().all(|x| x.is_finite()));
    }
});
