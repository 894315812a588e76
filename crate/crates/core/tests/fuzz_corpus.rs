//! Replays the checked-in fuzz corpus through the same round trips as the fuzz targets.

use std::fs;
use std::path::PathBuf;

use gegd::config::RunConfig;
use gegd::external::{format_response, parse_response, ExternalCostRequest};
use gegd::io::{parse_design_csv, parse_pgm, write_design_csv, write_pgm};
use gegd::RbfCovariance;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn config_seeds_parse_and_validate() {
    for (name, bytes) in seeds("parse_config") {
        let cfg = RunConfig::parse(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn pgm_seeds_round_trip() {
    for (name, bytes) in seeds("parse_pgm") {
        let design = parse_pgm(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_pgm(write_pgm(&design).as_bytes()).unwrap(), design, "{name}");
    }
}

#[test]
fn csv_seeds_round_trip() {
    for (name, bytes) in seeds("parse_design_csv") {
        let design = parse_design_csv(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_design_csv(&write_design_csv(&design)).unwrap(), design, "{name}");
    }
}

#[test]
fn response_seeds_round_trip() {
    for (name, bytes) in seeds("parse_cost_response") {
        let resp = parse_response(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_response(&format_response(&resp)).unwrap(), resp, "{name}");
    }
}

#[test]
fn request_seeds_round_trip() {
    for (name, bytes) in seeds("parse_cost_request") {
        let req = ExternalCostRequest::parse(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ExternalCostRequest::parse(&req.to_line()).unwrap(), req, "{name}");
    }
}

#[test]
fn cache_seeds_decode_or_fail_cleanly() {
    for (name, bytes) in seeds("decode_cov_cache") {
        match RbfCovariance::decode_cache(&bytes) {
            Ok(cov) => {
                let mut again = Vec::new();
                cov.write_cache(&mut again).unwrap();
                assert_eq!(again, bytes, "{name}");
            }
            Err(_) => assert!(name.starts_with("header_only"), "{name} should decode"),
        }
    }
}
