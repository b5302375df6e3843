//! Runs the checked-in fuzz corpus seeds through the same properties the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use multisite_resp::config::parse_config;
use multisite_resp::cube_io::{decode_cube, encode_cube, CubeHeader};
use multisite_resp::eval::{evaluate, parse_rates_csv};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("config_parse") {
        let text = String::from_utf8(bytes).unwrap();
        let parsed = parse_config(&text);
        let valid = !matches!(name.as_str(), "duplicate.cfg" | "syntax.cfg");
        assert_eq!(parsed.is_ok(), valid, "{name}: {parsed:?}");
        if let Ok(cfg) = parsed {
            assert_eq!(parse_config(&cfg.to_config_text()).unwrap(), cfg, "{name}");
        }
    }
}

#[test]
fn cube_seeds() {
    for (name, bytes) in seeds("cube_decode") {
        let header = CubeHeader::decode(&bytes);
        let cube = decode_cube(&bytes);
        match name.as_str() {
            "small.msrc" => {
                let cube = cube.unwrap();
                assert_eq!(cube.samples.len(), 16);
                assert_eq!(encode_cube(&cube).unwrap(), bytes);
            }
            "header_only.msrc" => {
                assert_eq!(header.unwrap().radar_id, 2);
                assert!(cube.is_err());
            }
            _ => assert!(header.is_err() && cube.is_err(), "{name}"),
        }
    }
}

#[test]
fn eval_seeds() {
    for (name, bytes) in seeds("eval_csv") {
        let text = String::from_utf8(bytes).unwrap();
        let parsed = parse_rates_csv(&text);
        if name == "duplicate_id.csv" {
            assert!(parsed.is_err());
            continue;
        }
        let rates = parsed.unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(evaluate(&rates, &rates).unwrap().rmse, 0.0);
    }
}
