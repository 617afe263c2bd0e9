#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::vision::{parse_silhouette, write_silhouette};

// Anything that parses must reach a canonical text that parses back to itself.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(poly) = parse_silhouette(text) else { return };
    let canonical = write_silhouette(&poly);
    let again = parse_silhouette(&canonical).expect("canonical silhouette must parse");
    assert_eq!(write_silhouette(&again), canonical);
});
