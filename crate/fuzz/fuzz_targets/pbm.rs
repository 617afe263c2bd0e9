#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::pipeline::{decode_pbm, encode_pbm};

fuzz_target!(|data: &[u8]| {
    if let Ok(mask) = decode_pbm(data) {
        assert_eq!(decode_pbm(&encode_pbm(&mask)).expect("re-encoded mask must decode"), mask);
    }
});
