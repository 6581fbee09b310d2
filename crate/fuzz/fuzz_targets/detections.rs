#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(boxes) = macroreg::io::parse_detections(text) {
        macroreg::io::parse_detections(&macroreg::io::write_detections(&boxes)).expect("re-parse");
    }
});
