use pfu_core::gradcheck::{gradient_check, ALL_COMPONENTS};
use std::time::Instant;
fn main() {
    let t0 = Instant::now();
    for c in ALL_COMPONENTS {
        let t = Instant::now();
        let r = gradient_check(c, 100, 1e-4, 42).unwrap();
        println!(
            "{:?}: cases {} passed {} failures {} in {:?}",
            c, r.cases, r.passed, r.failures.len(), t.elapsed()
        );
    }
    println!("total {:?}", t0.elapsed());
}
