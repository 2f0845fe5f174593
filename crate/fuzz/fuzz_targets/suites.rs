#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(src) = std::str::from_utf8(data) {
        if let Ok(v) = crgeom::cli::parse_suites(src) {
            assert!(!v.is_empty());
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }
});
