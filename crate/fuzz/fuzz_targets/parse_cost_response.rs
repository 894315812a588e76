#![no_main]

use gegd::external::{format_response, parse_response};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(resp) = parse_response(line) {
        let again = parse_response(&format_response(&resp)).expect("formatted response parses");
        assert_eq!(again, resp);
    }
});
