#![no_main]

use libfuzzer_sys::fuzz_target;

// NUL-separated arguments; --config and --help are dropped since they touch
// the filesystem or exit.
fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let args: Vec<&str> = src.split('\0').collect();
    if args.iter().any(|a| a.starts_with("--c") || a.starts_with("-h") || a.starts_with("--h") || a.starts_with("-V")) {
        return;
    }
    let _ = crgeom::cli::parse_config(std::iter::once("crgeom").chain(args));
});
