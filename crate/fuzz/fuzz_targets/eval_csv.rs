#![no_main]
use libfuzzer_sys::fuzz_target;
use multisite_resp::eval::{evaluate, parse_rates_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(rates) = parse_rates_csv(text) {
            let report = evaluate(&rates, &rates).expect("a file matches itself");
            assert_eq!(report.rmse, 0.0);
        }
    }
});
