#![no_main]

use libfuzzer_sys::fuzz_target;
use repgan::harness::parse_train_job;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_train_job(text);
    }
});
