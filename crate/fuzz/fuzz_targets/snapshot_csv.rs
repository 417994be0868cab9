#![no_main]

use libfuzzer_sys::fuzz_target;
use mixcontrol::experiments::Snapshot;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(snap) = Snapshot::parse_csv(text) {
        let back = Snapshot::parse_csv(&snap.to_csv_string()).expect("written snapshot parses");
        assert_eq!(back.rows.len(), snap.rows.len());
    }
});
