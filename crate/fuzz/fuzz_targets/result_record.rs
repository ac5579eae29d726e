#![no_main]

use libfuzzer_sys::fuzz_target;
use semiclassical_ir::io::ResultRecord;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = ResultRecord::from_json(text) {
        let json = record.to_json().unwrap();
        let _ = ResultRecord::from_json(&json).unwrap();
    }
});
