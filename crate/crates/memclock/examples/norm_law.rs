//! The conserved quantity predicts the *size* of the trained model before
//! training starts.
//!
//! On the scalar model a*b with target p* = 1, plain GD converges to a
//! global minimum whose squared norm is pinned by the initial imbalance:
//!
//!     a^2 + b^2 -> sqrt(D_0^2 + 4 p*^2)
//!
//! Twenty random starts with |D_0| up to 50 (trial 0 pinned to D_0 = -35,
//! the toy-landscape start) are trained to loss < 1e-16 and compared to
//! the formula. A huge initial imbalance therefore *guarantees* a huge
//! final norm — no training choice within plain GD can avoid it.
//!
//! ```text
//! cargo run --release --example norm_law
//! ```

use memclock::harness::{run_norm_law, ExperimentConfig, ExperimentKind, RunOptions};
use memclock::Result;

fn main() -> Result<()> {
    let config = ExperimentConfig::for_kind(ExperimentKind::NormLaw);
    let opts = RunOptions {
        out_dir: Some("memclock-out/norm_law".into()),
        ..RunOptions::default()
    };
    let summary = run_norm_law(&config, &opts)?;
    let details = &summary.details;

    println!("trial  D_0        steps     sq norm      predicted    rel error");
    for (idx, trial) in details["trials"].as_array().unwrap().iter().enumerate() {
        println!(
            "{idx:<6} {:<10.4} {:<9} {:<12.6} {:<12.6} {:.3e}",
            trial["d0"].as_f64().unwrap(),
            trial["steps"].as_u64().unwrap(),
            trial["sq_norm"].as_f64().unwrap(),
            trial["predicted_sq_norm"].as_f64().unwrap(),
            trial["rel_error"].as_f64().unwrap()
        );
        assert!(
            trial["converged"].as_bool().unwrap(),
            "trial {idx} did not converge"
        );
    }

    let max_rel = details["max_rel_error"].as_f64().unwrap();
    println!("\nworst relative error across trials: {max_rel:.3e}");
    assert!(max_rel < 1e-5);
    println!("the final norm was decided at initialization");
    Ok(())
}
