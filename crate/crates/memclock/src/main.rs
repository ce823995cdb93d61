//! memclock CLI: run the verification suite or one of the packaged
//! experiments from a JSON config.
//!
//! Every artifact-producing subcommand shares the same grammar:
//!
//! ```text
//! memclock <subcommand> [--config <path>] [--out <dir>] [--threads N] [--seed-override S]
//! ```
//!
//! Without --config, each subcommand runs its built-in default config.
//! Output lands in --out, else the config's out_dir, else $MEMCLOCK_OUT_DIR,
//! else ./memclock-out.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memclock::harness::{
    run_experiment, run_verify, ExperimentConfig, ExperimentKind, ExperimentSummary, RunOptions,
    RunStatus,
};
use memclock::Result;

#[derive(Parser)]
#[command(
    name = "memclock",
    version,
    about = "Imbalance conservation and forgetting clocks in linear networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (JSON). Defaults to the subcommand's built-in
    /// config; the kind must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (beats the config's out_dir and MEMCLOCK_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Re-derive every conservation identity and calibration number;
    /// exits nonzero if any check fails.
    Verify {
        /// Accepted for grammar uniformity; verify has nothing to configure
        /// and rejects these if set.
        #[command(flatten)]
        common: CommonArgs,
    },
    /// The closed-form clock table for the five reference recipes.
    Clocks(CommonArgs),
    /// Four-panel toy landscape on the scalar model.
    Figure7(CommonArgs),
    /// Initialization-memory sweep over sigma_w and seeds.
    Sweep(CommonArgs),
    /// Leakage studies: step-size order (kind leakage_order) or minibatch
    /// noise (kind minibatch_clock).
    Leakage(CommonArgs),
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { common } => run_verify_command(common),
        Command::Clocks(common) => {
            let summary = run_with(
                common,
                ExperimentKind::ClockTable,
                &[ExperimentKind::ClockTable],
            )?;
            print_clock_table(&summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Figure7(common) => {
            let summary = run_with(common, ExperimentKind::Figure7, &[ExperimentKind::Figure7])?;
            print_runs(&summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep(common) => {
            let summary = run_with(
                common,
                ExperimentKind::SigmaSweep,
                &[ExperimentKind::SigmaSweep],
            )?;
            print_runs(&summary);
            if let Some(spread) = summary.mem_spread {
                println!("memory spread (final_norm): {spread}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Leakage(common) => {
            let summary = run_with(
                common,
                ExperimentKind::LeakageOrder,
                &[ExperimentKind::LeakageOrder, ExperimentKind::MinibatchClock],
            )?;
            print_leakage(&summary);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_verify_command(common: CommonArgs) -> Result<ExitCode> {
    if common.config.is_some() || common.seed_override.is_some() {
        return Err(memclock::Error::Config {
            detail: "verify runs the built-in check suite; it takes no --config or --seed-override"
                .to_string(),
        });
    }
    let checks = run_verify();
    let mut failed = 0usize;
    for check in &checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {} — {}", check.name, check.detail);
        if !check.passed {
            failed += 1;
        }
    }
    println!(
        "verify: {}/{} checks passed",
        checks.len() - failed,
        checks.len()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

/// Load the config (or the built-in default), check it against the
/// subcommand's accepted kinds, and run it.
fn run_with(
    common: CommonArgs,
    default_kind: ExperimentKind,
    accepted: &[ExperimentKind],
) -> Result<ExperimentSummary> {
    let config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::for_kind(default_kind),
    };
    if !accepted.contains(&config.kind) {
        return Err(memclock::Error::Config {
            detail: format!(
                "config kind {:?} does not belong to this subcommand (accepted: {:?})",
                config.kind, accepted
            ),
        });
    }
    let opts = RunOptions {
        out_dir: common.out.clone(),
        threads: common.threads,
        seed_override: common.seed_override,
    };
    let summary = run_experiment(&config, &opts)?;
    println!(
        "{}: wrote summary_{}.json (git {}, {:.2}s)",
        config.kind.name(),
        config.kind.name(),
        summary.git_describe,
        summary.wall_time_s
    );
    Ok(summary)
}

fn print_clock_table(summary: &ExperimentSummary) {
    println!("epochs  batch   eta      lambda   steps      t_sgd        t_l2      t_adapt");
    if let Some(rows) = summary.details["rows"].as_array() {
        for row in rows {
            // serde_json's Display ignores width flags, so pad via strings.
            let cell = |v: &serde_json::Value| v.to_string();
            println!(
                "{:<7} {:<7} {:<8} {:<8} {:<10} {:<12.6e} {:<9.4} {:.4}",
                cell(&row["epochs"]),
                cell(&row["batch"]),
                cell(&row["eta"]),
                cell(&row["lambda"]),
                cell(&row["steps"]),
                row["t_sgd"].as_f64().unwrap_or(f64::NAN),
                row["t_l2"].as_f64().unwrap_or(f64::NAN),
                row["t_adapt"].as_f64().unwrap_or(f64::NAN)
            );
        }
    }
}

fn print_runs(summary: &ExperimentSummary) {
    for run in &summary.per_run {
        let marker = match run.status {
            RunStatus::Ok => "",
            RunStatus::Diverged => "  [diverged]",
            RunStatus::Failed => "  [failed]",
        };
        println!(
            "{:<24} final_loss {:<12.6e} final_d {:<12.6} final_norm {:.6}{marker}",
            run.label, run.final_loss, run.final_d, run.final_norm
        );
    }
}

fn print_leakage(summary: &ExperimentSummary) {
    let details = &summary.details;
    if details["gd_fit"].is_object() {
        println!(
            "gd slope {} (expect 2), precond slope {} (expect 1)",
            details["gd_fit"]["slope"], details["precond_fit"]["slope"]
        );
    }
    if let Some(grid) = details["grid"].as_array() {
        println!("b      component      b*component    eta_ratio");
        for point in grid {
            println!(
                "{:<6} {:<14.6e} {:<14.6e} {:.4}",
                point["b"].to_string(),
                point["component"].as_f64().unwrap_or(f64::NAN),
                point["b_times_component"].as_f64().unwrap_or(f64::NAN),
                point["eta_ratio"].as_f64().unwrap_or(f64::NAN)
            );
        }
        println!(
            "slope vs 1/b: {}, full-batch component: {}",
            details["slope_vs_inv_b"], details["full_batch_component"]
        );
    }
}
