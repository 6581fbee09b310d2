#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = macroreg::io::parse_transform(text) {
        macroreg::io::parse_transform(&macroreg::io::write_transform(&t)).expect("re-parse");
    }
});
