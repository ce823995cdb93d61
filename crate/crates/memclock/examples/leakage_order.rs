//! How fast does one step leak the conserved quantity, as a function of
//! the step size?
//!
//! From a deliberately unbalanced scalar start (a, b) = (1.5, 0.5), take a
//! single step at each eta in a log-spaced grid and measure
//! |D_after - D_before|:
//!
//! - a plain gradient step leaks at second order (log-log slope 2) — the
//!   leak is an integrator artifact that vanishes quadratically;
//! - a preconditioned step (per-factor scales [2, 1]) breaks the shared-
//!   gradient structure and leaks at first order (slope 1) — a genuine,
//!   optimizer-induced forgetting rate.
//!
//! ```text
//! cargo run --example leakage_order
//! ```

use memclock::harness::{run_leakage_order, ExperimentConfig, ExperimentKind, RunOptions};
use memclock::Result;

fn main() -> Result<()> {
    let config = ExperimentConfig::for_kind(ExperimentKind::LeakageOrder);
    let opts = RunOptions {
        out_dir: Some("memclock-out/leakage_order".into()),
        ..RunOptions::default()
    };
    let summary = run_leakage_order(&config, &opts)?;
    let details = &summary.details;

    println!("eta          |dD| gd        |dD| precond");
    let etas = details["eta_grid"].as_array().unwrap();
    let gd = details["gd_deltas"].as_array().unwrap();
    let pc = details["precond_deltas"].as_array().unwrap();
    for i in 0..etas.len() {
        println!(
            "{:<12.4e} {:<14.4e} {:.4e}",
            etas[i].as_f64().unwrap(),
            gd[i].as_f64().unwrap(),
            pc[i].as_f64().unwrap()
        );
    }

    let gd_slope = details["gd_fit"]["slope"].as_f64().unwrap();
    let pc_slope = details["precond_fit"]["slope"].as_f64().unwrap();
    println!("\nlog-log slopes: gd {gd_slope:.4} (order 2), precond {pc_slope:.4} (order 1)");
    assert!((gd_slope - 2.0).abs() < 0.1);
    assert!((pc_slope - 1.0).abs() < 0.1);
    Ok(())
}
