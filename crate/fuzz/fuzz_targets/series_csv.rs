#![no_main]

use libfuzzer_sys::fuzz_target;
use semiclassical_ir::io::read_series_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok((t, v, e)) = read_series_csv(data) {
        assert_eq!(t.len(), v.len());
        assert_eq!(t.len(), e.len());
    }
});
