#![no_main]
use libfuzzer_sys::fuzz_target;
use multisite_resp::config::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(text) {
            // Anything accepted must survive a render/parse round trip.
            let again = parse_config(&cfg.to_config_text()).expect("rendered config parses");
            assert_eq!(again, cfg);
        }
    }
});
