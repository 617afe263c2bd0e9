#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::pipeline::StyleLibrary;
use p2b_core::vision::RasterMask;

// Template files resolve to a fixed small mask so only the manifest varies.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = StyleLibrary::from_manifest(text, |_| {
        let mut m = RasterMask::new(16, 16);
        for y in 4..12 {
            for x in 4..12 {
                m.set(x, y, true);
            }
        }
        Ok(m)
    });
});
