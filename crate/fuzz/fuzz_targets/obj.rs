#![no_main]

use libfuzzer_sys::fuzz_target;
use p2b_core::grammar::parse_obj;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = parse_obj(text) {
        for f in &doc.faces {
            assert!(f.vertices.iter().all(|&i| i < doc.vertices.len()), "vertex index out of range");
            assert!(f.uvs.iter().flatten().all(|&i| i < doc.uvs.len()), "uv index out of range");
            assert!(f.normals.iter().flatten().all(|&i| i < doc.normals.len()), "normal index out of range");
        }
    }
});
