#![no_main]

use libfuzzer_sys::fuzz_target;
use torific::catalog::CatalogDocument;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = CatalogDocument::parse(data) {
        let _ = doc.to_polytope();
    }
});
