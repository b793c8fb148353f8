#![no_main]

use libfuzzer_sys::fuzz_target;
use was::tasks::{parse_dists, render_dists};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_dists(text) {
        assert!(t.all_finite());
        assert_eq!(parse_dists(&render_dists(&t)).expect("rendered dists parse"), t);
    }
});
