#![no_main]

use libfuzzer_sys::fuzz_target;
use semiclassical_ir::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_toml(text) {
        // an accepted config must survive its own echo
        let echo = cfg.to_toml().unwrap();
        let again = RunConfig::from_toml(&echo).unwrap();
        assert_eq!(again.to_toml().unwrap(), echo);
    }
});
