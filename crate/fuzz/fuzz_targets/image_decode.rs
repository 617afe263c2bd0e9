#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::vision::ImageBuffer;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = ImageBuffer::decode(data) {
        assert_eq!(img.rgb.len(), img.width * img.height * 3);
    }
});
