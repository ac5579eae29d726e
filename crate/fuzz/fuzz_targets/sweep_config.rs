#![no_main]

use libfuzzer_sys::fuzz_target;
use semiclassical_ir::config::SweepConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sweep) = SweepConfig::from_toml(text) {
        let _ = sweep.cells();
    }
});
