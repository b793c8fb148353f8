#![no_main]

use libfuzzer_sys::fuzz_target;
use was::tasks::{TaskKind, TeacherEntry};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = TeacherEntry::parse(text);
    let _ = TaskKind::parse_list(text);
});
