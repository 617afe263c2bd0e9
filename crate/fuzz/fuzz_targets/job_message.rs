#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::broker::JobMessage;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(msg) = JobMessage::from_json(text) {
        assert_eq!(JobMessage::from_json(&msg.to_json()).expect("re-encoded message must parse"), msg);
    }
});
