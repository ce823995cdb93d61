//! Experiment harness: configuration, the trajectory runner, the seven
//! experiment entry points, artifact emission, and the runtime
//! verification suite.
//!
//! The harness guarantees reproducibility end to end: a config fully
//! determines every run (initialization, data, sampling, optimizer), runs
//! merge deterministically regardless of thread count, and identical
//! configs produce byte-identical trajectory CSVs.

pub mod config;
pub mod emit;
pub mod experiments;
pub mod runner;
pub mod verify;

pub use config::{default_eta_grid, ExperimentConfig, ExperimentKind, RecordStride};
pub use emit::{
    csv_text, emit_csv, emit_summary, git_describe, read_csv, read_summary, CsvRow,
    ExperimentSummary, RunSummaryRow, CSV_HEADER,
};
pub use experiments::{
    clock_table, run_clock_table, run_decay_check, run_experiment, run_figure7, run_leakage_order,
    run_minibatch_clock, run_norm_law, run_sigma_sweep, ClockTableRow, CLOCK_TABLE_N_TRAIN,
};
pub use runner::{
    parallel_map, resolve_out_dir, run_trajectory, RunOptions, RunOutcome, RunSpec, RunStatus,
    TrajectoryRow,
};
pub use verify::{run_verify, CheckOutcome};
