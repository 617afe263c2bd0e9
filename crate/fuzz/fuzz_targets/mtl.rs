#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::grammar::parse_mtl;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_mtl(text);
    }
});
