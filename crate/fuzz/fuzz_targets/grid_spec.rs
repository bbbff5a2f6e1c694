#![no_main]

use libfuzzer_sys::fuzz_target;
use ptcontrol::experiment::parse_grid;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(g) = parse_grid(text) {
            assert!(g.n_theta >= 2 && g.n_phi >= 2);
        }
    }
});
