#![no_main]

use libfuzzer_sys::fuzz_target;
use mixcontrol::experiments::TimeSeries;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(series) = TimeSeries::parse_csv(text) {
        let _ = series.drift_maxima();
        let _ = TimeSeries::parse_csv(&series.to_csv_string()).expect("written series parses");
    }
});
