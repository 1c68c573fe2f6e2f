#![no_main]

use libfuzzer_sys::fuzz_target;
use repgan::metrics::{evaluate, parse_target, MetricSettings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(target) = parse_target(text) {
        let samples = vec![vec![0.0, 0.0], vec![1.5, -0.5]];
        let _ = evaluate(&samples, &target, &MetricSettings::default(), None);
    }
});
