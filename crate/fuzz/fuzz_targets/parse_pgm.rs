#![no_main]

use gegd::io::{parse_pgm, write_pgm};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(design) = parse_pgm(data) {
        let again = parse_pgm(write_pgm(&design).as_bytes()).expect("written PGM parses");
        assert_eq!(again, design);
    }
});
