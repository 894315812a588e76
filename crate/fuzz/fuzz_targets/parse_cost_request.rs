#![no_main]

use gegd::external::ExternalCostRequest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(req) = ExternalCostRequest::parse(line) {
        let design = req.design().expect("validated on parse");
        assert_eq!(design.to_bit_string(), req.design);
        assert_eq!(ExternalCostRequest::parse(&req.to_line()).unwrap(), req);
    }
});
