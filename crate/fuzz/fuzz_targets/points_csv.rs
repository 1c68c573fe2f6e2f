#![no_main]

use libfuzzer_sys::fuzz_target;
use repgan::datasets::{parse_points_csv, write_points_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(points) = parse_points_csv(data) else { return };
    if let Some(first) = points.first() {
        assert!(points.iter().all(|p| p.len() == first.len()));
        assert!(points.iter().flatten().all(|v| v.is_finite()));
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &points).expect("writable");
        assert_eq!(parse_points_csv(buf.as_slice()).expect("round trip"), points);
    }
});
