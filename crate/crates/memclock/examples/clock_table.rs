//! Forgetting clocks for five realistic training recipes, from the
//! schedule alone — no training run needed.
//!
//! Each (epochs, batch, eta, lambda) recipe on a 40k-sample dataset gets
//! its three clocks:
//!
//! - T_sgd   = (1/b) * sum_k eta_k^2   (minibatch-noise clock)
//! - T_l2    = lambda * sum_k eta_k    (weight-decay clock)
//! - T_adapt = sum_k eta_k             (adaptivity clock)
//!
//! The punchline: 300 epochs at batch 128 barely ticks the SGD clock
//! (7.3e-4), while the same 300 epochs at batch 16 with a 10x step size
//! tick it 6400x harder (4.7). Small batches and large steps forget;
//! big batches and small steps remember.
//!
//! ```text
//! cargo run --example clock_table
//! ```

use memclock::harness::{clock_table, ClockTableRow, CLOCK_TABLE_N_TRAIN};

fn main() {
    let rows = clock_table();
    println!("clocks for an n = {CLOCK_TABLE_N_TRAIN} dataset\n");
    println!(
        "{:>6} {:>6} {:>7} {:>7} {:>9}   {:>11} {:>9} {:>10}",
        "epochs", "batch", "eta", "lambda", "steps", "T_sgd", "T_l2", "T_adapt"
    );
    for ClockTableRow {
        epochs,
        batch,
        eta,
        lambda,
        steps,
        t_sgd,
        t_l2,
        t_adapt,
        highlight,
    } in &rows
    {
        println!(
            "{epochs:>6} {batch:>6} {eta:>7} {lambda:>7} {steps:>9}   {t_sgd:>11.5e} {t_l2:>9.4} {t_adapt:>10.1}  {highlight}"
        );
    }

    let ratio = rows[2].t_sgd / rows[0].t_sgd;
    println!("\nT_sgd ratio, (batch 16, eta 0.01) vs (batch 128, eta 0.001): {ratio:.0}x");
    assert!((ratio - 6400.0).abs() < 1.0);
}
