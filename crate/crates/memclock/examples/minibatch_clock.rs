//! Measure the minibatch-noise clock directly: the per-step erosion of D
//! scales like eta^2 / b.
//!
//! On a frozen two-factor state, draw 10,000 random minibatches per batch
//! size b in {1, 2, 4, 8, 16}, take one SGD step on each draw, and average
//! the movement of D. Subtracting the step taken at the empirical mean
//! gradient cancels the Monte Carlo error in the mean itself, leaving the
//! pure noise-driven component. Three clean scalings fall out:
//!
//! - b * component is flat across the grid        (the 1/b law),
//! - halving eta divides the component by exactly 4 (the eta^2 law, exact
//!   because both step sizes share the same draws),
//! - the full-batch row is identically zero        (no sampling, no noise).
//!
//! ```text
//! cargo run --release --example minibatch_clock
//! ```

use memclock::harness::{run_minibatch_clock, ExperimentConfig, ExperimentKind, RunOptions};
use memclock::Result;

fn main() -> Result<()> {
    let config = ExperimentConfig::for_kind(ExperimentKind::MinibatchClock);
    let opts = RunOptions {
        out_dir: Some("memclock-out/minibatch_clock".into()),
        ..RunOptions::default()
    };
    let summary = run_minibatch_clock(&config, &opts)?;
    let details = &summary.details;

    println!(
        "{} draws per batch size, eta = {}\n",
        details["mc_batches"], details["eta"]
    );
    println!("b      component      b*component    component(eta/2) ratio");
    for point in details["grid"].as_array().unwrap() {
        println!(
            "{:<6} {:<14.6e} {:<14.6e} {:.6}",
            point["b"].as_u64().unwrap(),
            point["component"].as_f64().unwrap(),
            point["b_times_component"].as_f64().unwrap(),
            point["eta_ratio"].as_f64().unwrap()
        );
    }

    let full = details["full_batch_component"].as_f64().unwrap();
    println!("\nfull-batch component: {full} (exactly zero)");
    println!(
        "component vs 1/b: slope {:.6e}, intercept {:.3e}",
        details["slope_vs_inv_b"].as_f64().unwrap(),
        details["intercept"].as_f64().unwrap()
    );
    assert_eq!(full, 0.0);
    for point in details["grid"].as_array().unwrap() {
        let ratio = point["eta_ratio"].as_f64().unwrap();
        assert!((ratio - 4.0).abs() < 0.5, "eta^2 law violated: {ratio}");
    }
    Ok(())
}
