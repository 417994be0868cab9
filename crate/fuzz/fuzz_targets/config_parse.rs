#![no_main]

use libfuzzer_sys::fuzz_target;
use mixcontrol::experiments::ScenarioConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ScenarioConfig::from_toml_str(text) {
        // accepted configs must survive a round trip
        let again = config.to_toml_string().expect("valid config serializes");
        ScenarioConfig::from_toml_str(&again).expect("serialized config parses");
    }
});
