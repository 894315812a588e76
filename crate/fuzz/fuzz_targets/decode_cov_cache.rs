#![no_main]

use gegd::RbfCovariance;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cov) = RbfCovariance::decode_cache(data) {
        let mut bytes = Vec::new();
        cov.write_cache(&mut bytes).expect("in-memory write");
        let again = RbfCovariance::decode_cache(&bytes).expect("re-encoded cache decodes");
        assert_eq!(again.dim(), cov.dim());
    }
});
