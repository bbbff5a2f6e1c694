#![no_main]

use libfuzzer_sys::fuzz_target;
use ptcontrol::experiment::parse_controls;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = parse_controls(text) {
            assert!(s.validate().is_ok());
        }
    }
});
