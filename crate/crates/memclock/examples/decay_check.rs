//! Validate the two exact decay laws for the conserved quantity.
//!
//! Part 1 — integrator honesty. At lambda = 0 the flow conserves D
//! exactly, so any drift is RK4 error: halving the integrator step h must
//! divide the drift by ~16 (fourth order).
//!
//! Part 2 — continuous decay. With weight decay lambda the flow obeys
//! D(t) = e^(-2 lambda t) D(0) in closed form; integrate to t = 1 and
//! compare against the formula.
//!
//! Part 3 — discrete decay. On a zero-gradient task, K weight-decay steps
//! scale D by prod_k (1 - eta_k lambda)^2 exactly, even under a cosine
//! schedule where every step size differs.
//!
//! ```text
//! cargo run --example decay_check
//! ```

use memclock::harness::{run_decay_check, ExperimentConfig, ExperimentKind, RunOptions};
use memclock::Result;

fn main() -> Result<()> {
    let config = ExperimentConfig::for_kind(ExperimentKind::DecayCheck);
    let opts = RunOptions {
        out_dir: Some("memclock-out/decay_check".into()),
        ..RunOptions::default()
    };
    let summary = run_decay_check(&config, &opts)?;
    let details = &summary.details;

    for family in details["families"].as_array().unwrap() {
        println!(
            "{} drift at lambda = 0:",
            family["family"].as_str().unwrap()
        );
        let hs = family["h_grid"].as_array().unwrap();
        let drifts = family["drifts"].as_array().unwrap();
        for (h, d) in hs.iter().zip(drifts) {
            println!(
                "  h = {:<8} drift {:.4e}",
                h.to_string(),
                d.as_f64().unwrap()
            );
        }
        let ratios: Vec<f64> = family["halving_ratios"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r.as_f64().unwrap())
            .collect();
        println!("  halving ratios {ratios:.3?} (fourth order = 16)\n");
        for r in ratios {
            assert!(r > 8.0, "drift must shrink at least 8x per halving");
        }
    }

    let decay = &details["decay"];
    println!(
        "flow decay: lambda = {}, t = {}, relative error {:.3e}",
        decay["lambda"],
        decay["t_end"],
        decay["rel_error"].as_f64().unwrap()
    );
    assert!(decay["rel_error"].as_f64().unwrap() < 1e-6);

    let discrete = &details["discrete"];
    println!(
        "discrete decay ({}): relative error {:.3e}",
        discrete["schedule"].as_str().unwrap(),
        discrete["rel_error"].as_f64().unwrap()
    );
    assert!(discrete["rel_error"].as_f64().unwrap() < 1e-10);
    println!("\nboth decay laws hold: e^(-2 lambda t) and prod (1 - eta_k lambda)^2");
    Ok(())
}
