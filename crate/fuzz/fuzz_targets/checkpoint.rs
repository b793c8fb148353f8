#![no_main]

use libfuzzer_sys::fuzz_target;
use was::gnn::{Checkpoint, HeadParams};
use was::was::Student;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = Checkpoint::parse(text) {
        assert_eq!(Checkpoint::parse(&ckpt.to_json()).expect("serialized checkpoints parse"), ckpt);
        let _ = Student::from_checkpoint(&ckpt);
        let _ = HeadParams::from_checkpoint(&ckpt);
    }
});
