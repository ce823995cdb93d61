//! Run the full built-in verification suite and print one line per check.
//!
//! This is the programmatic twin of `memclock verify`: every conservation
//! identity, integrator order, decay law, norm law, clock value, and
//! minibatch-noise scaling is re-derived from scratch at machine precision.
//!
//! ```text
//! cargo run --example identity_suite
//! ```

use memclock::harness::run_verify;

fn main() {
    let checks = run_verify();
    let mut failed = 0;
    for check in &checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<18} {}", check.name, check.detail);
        if !check.passed {
            failed += 1;
        }
    }
    println!("\n{}/{} checks passed", checks.len() - failed, checks.len());
    assert_eq!(failed, 0, "verification suite reported failures");
}
