#![no_main]

use libfuzzer_sys::fuzz_target;
use ptcontrol::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_json(text) {
            let again = serde_json::to_string(&cfg).expect("config serializes");
            assert_eq!(ExperimentConfig::from_json(&again).expect("round trip"), cfg);
        }
    }
});
