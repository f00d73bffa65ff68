#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Parsing must never panic; validation runs on anything that parses.
        if let Ok(config) = emtrack::pipeline::parse_config(text) {
            let _ = config.validate();
        }
    }
});
