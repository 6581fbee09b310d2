#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = macroreg::io::parse_features(text) {
        // anything accepted must survive a write/parse round trip
        let again = macroreg::io::parse_features(&macroreg::io::write_features(&set)).expect("re-parse");
        assert_eq!(again.len(), set.len());
    }
});
