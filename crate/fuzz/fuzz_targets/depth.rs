#![no_main]

use libfuzzer_sys::fuzz_target;

use macroreg::reconstruction::DepthMap;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = DepthMap::decode(data) {
        assert_eq!(map.values().len(), map.width() as usize * map.height() as usize);
        let _ = map.depth_at(&macroreg::reconstruction::Point2::new(1.5, 2.5));
    }
});
