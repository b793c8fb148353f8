//! Input: the five dataset files joined by NUL bytes, in the order
//! meta, features, edges, labels, masks.
#![no_main]

use libfuzzer_sys::fuzz_target;
use was::graph::{parse_dataset, render_dataset, DatasetText};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut parts = text.split('\0').map(str::to_owned);
    let mut next = || parts.next().unwrap_or_default();
    let files = DatasetText { meta: next(), features: next(), edges: next(), labels: next(), masks: next() };
    if let Ok(g) = parse_dataset(&files) {
        let again = parse_dataset(&render_dataset(&g)).expect("rendered datasets parse");
        assert_eq!(again, g);
    }
});
