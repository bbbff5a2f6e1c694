#![no_main]

use libfuzzer_sys::fuzz_target;
use ptcontrol::process_tensor::{from_bytes, to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(pt) = from_bytes(data) {
        let bytes = to_bytes(&pt).expect("accepted PT re-serializes");
        assert_eq!(from_bytes(&bytes).expect("re-serialized PT parses"), pt);
    }
});
