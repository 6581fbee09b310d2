#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(index) = macroreg::io::parse_index(text) {
        let again = macroreg::io::parse_index(&macroreg::io::write_index(&index)).expect("re-parse");
        assert_eq!(again.descriptors(), index.descriptors());
    }
});
