#![no_main]

use crgeom::poly::ScalarFieldSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let names: Vec<String> = ["x1", "y1", "x2", "y2", "x3", "y3"].iter().map(|s| s.to_string()).collect();
    if let Ok(p) = ScalarFieldSpec::parse(src, &names) {
        if p.terms().any(|(_, c)| !c.is_finite()) {
            return;
        }
        // printing and reparsing keeps the polynomial
        let again = ScalarFieldSpec::parse(&p.display(&names), &names).expect("display output parses");
        let x = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7];
        let (a, b) = (p.eval(&x), again.eval(&x));
        if a.is_finite() && b.is_finite() {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{src:?}: {a} vs {b}");
        }
    }
});
