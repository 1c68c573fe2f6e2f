#![no_main]

use libfuzzer_sys::fuzz_target;
use repgan::harness::validate_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = validate_config(text) {
            // Anything accepted must survive a serialize/parse round trip.
            let again = serde_json::to_string(&cfg).expect("serializable");
            assert_eq!(validate_config(&again).expect("round trip"), cfg);
            let _ = cfg.target();
            let _ = cfg.seeds();
        }
    }
});
