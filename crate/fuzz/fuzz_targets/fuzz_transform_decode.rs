#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // The wire decoder accepts untrusted bytes and must never panic. Anything
    // that decodes must survive a re-encode.
    if let Ok(message) = emtrack::igtlink::decode_transform(data) {
        let _ = emtrack::igtlink::encode_transform(&message);
    }
});
