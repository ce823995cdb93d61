//! Does the trained network remember how big its initialization was?
//!
//! Sweeps the initialization scale sigma_w over {0.5, 1, 2} x three seeds
//! on a two-factor model, twice:
//!
//! - plain GD (lambda = 0): the imbalance is conserved, so the final
//!   total weight norm still sorts cleanly by sigma_w — the optimizer
//!   remembers its starting scale long after the loss has converged;
//! - GD + weight decay with lambda sized so the decay clock reads
//!   T_l2 = lambda * sum eta_k = 5: the conserved quantity is damped by
//!   e^(-2 T_l2) ~ 5e-5 and the sigma_w dependence collapses.
//!
//! The "memory spread" is max - min of the per-sigma mean final norms.
//! Writes per-run CSVs plus a sensitivity curve (|d norm / d sigma| vs
//! the adaptivity clock) under memclock-out/sigma_sweep/.
//!
//! ```text
//! cargo run --release --example sigma_sweep
//! ```

use memclock::harness::{run_sigma_sweep, ExperimentConfig, ExperimentKind, RunOptions};
use memclock::optimizers::Algorithm;
use memclock::Result;

fn run(label: &str, lambda: f64) -> Result<f64> {
    let mut config = ExperimentConfig::for_kind(ExperimentKind::SigmaSweep);
    if lambda > 0.0 {
        config.optimizer.algorithm = Algorithm::GdWeightDecay;
        config.optimizer.lambda = lambda;
    }
    let opts = RunOptions {
        out_dir: Some(format!("memclock-out/sigma_sweep/{label}").into()),
        threads: 4,
        ..RunOptions::default()
    };
    let summary = run_sigma_sweep(&config, &opts)?;

    let memory = &summary.details["memory"];
    println!("{label} (lambda = {lambda}):");
    let sigmas = memory["sigma_values"].as_array().unwrap();
    let means = memory["means"].as_array().unwrap();
    for (sigma, mean) in sigmas.iter().zip(means) {
        println!(
            "  sigma_w {:>4}  mean final norm {:.6}",
            sigma,
            mean.as_f64().unwrap()
        );
    }
    let spread = summary.mem_spread.unwrap();
    println!("  memory spread = {spread:.6}\n");
    Ok(spread)
}

fn main() -> Result<()> {
    let plain = run("plain", 0.0)?;
    // 20_000 steps at eta = 1e-4 give sum eta_k = 2, so lambda = 2.5 sets
    // the decay clock to T_l2 = 5 (damping factor e^-10 on the imbalance).
    let decayed = run("decay", 2.5)?;

    println!("spread ratio plain/decay = {:.1}x", plain / decayed);
    assert!(plain > 0.1, "plain GD must retain sigma_w memory");
    assert!(
        plain / decayed > 10.0,
        "weight decay must shrink the memory spread at least 10x"
    );
    println!("weight decay forgets the initialization; plain GD never does");
    Ok(())
}
