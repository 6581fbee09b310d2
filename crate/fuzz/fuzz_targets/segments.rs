#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(segments) = macroreg::io::parse_segments(text) {
        if segments.len() > 64 {
            return;
        }
        // joining must terminate and never add segments
        let joined = macroreg::reconstruction::join_segments(&segments, 2.0, 10.0);
        assert!(joined.len() <= segments.len());
    }
});
