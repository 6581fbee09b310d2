#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(k) = macroreg::io::parse_intrinsics(text) {
        macroreg::io::parse_intrinsics(&macroreg::io::write_intrinsics(&k)).expect("re-parse");
    }
});
