#![no_main]

use libfuzzer_sys::fuzz_target;
use ptcontrol::experiment::parse_duration_range;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(v) = parse_duration_range(text) {
            assert!(!v.is_empty());
            assert!(v.windows(2).all(|w| w[1] > w[0]));
        }
    }
});
