//! Trajectory runner: executes one configured run step by step, records
//! rows at the configured checkpoints, and classifies how the run ended.
//!
//! Rows are comparable across runs of the same config because every run
//! records the same step set and the accumulated clocks on a row are the
//! same partial sums `diagnostics::compute_clocks` would produce at that
//! step (same additions, same order, one final division).

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::conservation::{imbalance, ImbalanceRecord};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::models::{loss_and_product_grad, Batch, ModelState, QuadraticTask};
use crate::optimizers::{advance, OptimizerSpec, OptimizerState};

/// How a run ended. Stored per row (so partial trajectories are
/// self-describing) and once per run in the summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    /// Reached the schedule horizon.
    Ok,
    /// A factor norm crossed the blow-up threshold.
    Diverged,
    /// Any other error (non-finite gradient, config mismatch, ...).
    Failed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::Failed => "failed",
        }
    }

    pub fn parse(text: &str) -> Result<RunStatus> {
        match text {
            "ok" => Ok(RunStatus::Ok),
            "diverged" => Ok(RunStatus::Diverged),
            "failed" => Ok(RunStatus::Failed),
            other => Err(Error::CsvParse {
                line: 0,
                detail: format!("unknown run status {other:?}"),
            }),
        }
    }
}

/// One recorded trajectory checkpoint: the state after `step` applied
/// steps, plus the clock partial sums over those steps.
///
/// Conventions: `eta` is the schedule rate of the *next* step (the final
/// row carries the schedule endpoint value); `loss` is the full-dataset
/// objective at the recorded state, independent of the batch the optimizer
/// saw (per-batch losses live in the step records).
#[derive(Clone, Debug)]
pub struct TrajectoryRow {
    pub step: u64,
    pub eta: f64,
    pub loss: f64,
    /// Imbalance entries, adjacent pairs concatenated row-major.
    pub d_flat: Vec<f64>,
    /// Total Frobenius norm over all adjacent pairs.
    pub d_fro: f64,
    /// Frobenius norm of each factor, chain order.
    pub factor_norms: Vec<f64>,
    pub t_sgd: f64,
    pub t_l2: f64,
    pub t_adapt: f64,
    pub sigma_w: f64,
    pub seed: u64,
    pub status: RunStatus,
}

impl TrajectoryRow {
    /// Root-sum-square of the factor norms (the `norm_total` CSV column).
    pub fn norm_total(&self) -> f64 {
        self.factor_norms.iter().map(|n| n * n).sum::<f64>().sqrt()
    }
}

/// Everything needed to execute one run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    /// Short name used in filenames and summaries, e.g. "sigma_0.5_seed_1".
    pub label: String,
    pub sigma_w: f64,
    pub seed: u64,
    pub state: ModelState,
    pub task: QuadraticTask,
    pub optimizer: OptimizerSpec,
    /// Steps to record; the runner also records the step a failure occurs
    /// at, so partial trajectories end with the failing checkpoint.
    pub record: BTreeSet<u64>,
}

/// A finished (possibly truncated) run with its recorded rows and final
/// scalar metrics.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub label: String,
    pub sigma_w: f64,
    pub seed: u64,
    pub status: RunStatus,
    /// Human-readable cause when status is not `ok`.
    pub error: Option<String>,
    pub rows: Vec<TrajectoryRow>,
    pub final_state: ModelState,
    /// Full-dataset loss at the last reached state.
    pub final_loss: f64,
    /// Signed imbalance for 1x1 records, total Frobenius norm otherwise.
    pub final_d: f64,
    /// Root-sum-square factor norm at the last reached state.
    pub final_norm: f64,
    /// First step (0 = initial state) with total imbalance norm below 0.5,
    /// tracked on every step regardless of the recording stride.
    pub first_step_small_d: Option<u64>,
    /// Imbalance distance between the last two visited states; zero for
    /// runs that never completed a step. A converged-to-stall run shows
    /// this collapsing to roundoff.
    pub last_delta_d: f64,
}

fn signed_or_total(record: &ImbalanceRecord) -> f64 {
    record.scalar().unwrap_or_else(|| record.total_fro())
}

/// Execute one run to its schedule horizon or first error.
///
/// Errors raised by the optimizer at runtime (blow-up, non-finite
/// gradients) are *captured* into the outcome status; only setup problems
/// (shape mismatches, invalid specs) propagate as `Err`.
pub fn run_trajectory(spec: &RunSpec) -> Result<RunOutcome> {
    spec.optimizer.validate()?;
    spec.task.check_model(&spec.state)?;
    let mut state = spec.state.clone();
    let mut task = spec.task.clone();
    let mut opt_state = OptimizerState::for_algorithm(spec.optimizer.algorithm, &state);
    let total = spec.optimizer.schedule.total_steps;
    let batch_denom = task.batch_size() as f64;
    let lambda = spec.optimizer.lambda;

    let mut sum_eta = 0.0f64;
    let mut sum_eta_sq = 0.0f64;
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut status = RunStatus::Ok;
    let mut error = None;

    let mut record_now = imbalance(&state);
    let mut first_step_small_d = if record_now.total_fro() < 0.5 {
        Some(0)
    } else {
        None
    };
    let mut last_delta_d = 0.0;

    // Takes the task as an argument (not a capture) so the main loop can
    // still hand `advance` its mutable borrow.
    let make_row = |k: u64,
                    state: &ModelState,
                    task: &QuadraticTask,
                    record: &ImbalanceRecord,
                    sum_eta: f64,
                    sum_eta_sq: f64,
                    status: RunStatus|
     -> Result<TrajectoryRow> {
        // Full-dataset loss at the recorded state; evaluating with an
        // explicit Batch::Full never touches the sampler.
        let (loss, _) = loss_and_product_grad(state, task, &Batch::Full)?;
        Ok(TrajectoryRow {
            step: k,
            eta: spec.optimizer.schedule.eta(k)?,
            loss,
            d_flat: record
                .pairs()
                .iter()
                .flat_map(|d| d.as_slice().iter().copied())
                .collect(),
            d_fro: record.total_fro(),
            factor_norms: state.stack().iter().map(|w| w.frobenius_norm()).collect(),
            t_sgd: sum_eta_sq / batch_denom,
            t_l2: lambda * sum_eta,
            t_adapt: sum_eta,
            sigma_w: spec.sigma_w,
            seed: spec.seed,
            status,
        })
    };

    let mut k: u64 = 0;
    loop {
        if spec.record.contains(&k) {
            rows.push(make_row(
                k,
                &state,
                &task,
                &record_now,
                sum_eta,
                sum_eta_sq,
                status,
            )?);
        }
        if k == total {
            break;
        }
        match advance(&state, &mut task, &spec.optimizer, &mut opt_state, k) {
            Ok((next, rec)) => {
                state = next;
                sum_eta += rec.eta;
                sum_eta_sq += rec.eta * rec.eta;
                let record_next = imbalance(&state);
                last_delta_d = record_next.distance(&record_now)?;
                if first_step_small_d.is_none() && record_next.total_fro() < 0.5 {
                    first_step_small_d = Some(k + 1);
                }
                record_now = record_next;
                k += 1;
            }
            Err(e) => {
                status = match e {
                    Error::BlowUp { .. } => RunStatus::Diverged,
                    _ => RunStatus::Failed,
                };
                error = Some(e.to_string());
                // Close the trajectory with a checkpoint at the failing
                // step; replace the loop-top row if this step already has
                // one, so steps stay strictly increasing.
                if rows.last().map(|r| r.step) == Some(k) {
                    rows.pop();
                }
                rows.push(make_row(
                    k,
                    &state,
                    &task,
                    &record_now,
                    sum_eta,
                    sum_eta_sq,
                    status,
                )?);
                break;
            }
        }
    }

    let (final_loss, _) = loss_and_product_grad(&state, &task, &Batch::Full)?;
    Ok(RunOutcome {
        label: spec.label.clone(),
        sigma_w: spec.sigma_w,
        seed: spec.seed,
        status,
        error,
        final_loss,
        final_d: signed_or_total(&record_now),
        final_norm: state.norm_total(),
        final_state: state,
        first_step_small_d,
        last_delta_d,
        rows,
    })
}

/// Run `f` over `jobs` on up to `threads` worker threads, returning results
/// in job order. `threads <= 1` runs inline; the parallel path is
/// deterministic because result slot i always holds f(jobs[i]).
pub fn parallel_map<T, R, F>(jobs: Vec<T>, threads: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = jobs.len();
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        return jobs.into_iter().map(f).collect();
    }
    let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let jobs: Vec<Mutex<Option<T>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let job = jobs[i].lock().unwrap().take().expect("job taken once");
                let result = f(job);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Execution options shared by every experiment entry point.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Output directory override (highest precedence).
    pub out_dir: Option<PathBuf>,
    /// Worker threads for independent runs; 0 or 1 means sequential.
    pub threads: usize,
    /// When set, replaces the config's initialization seed list with this
    /// single seed. Sampler and data seeds are untouched.
    pub seed_override: Option<u64>,
}

/// Where artifacts go: `--out` flag, then the config's `out_dir`, then the
/// MEMCLOCK_OUT_DIR environment variable, then ./memclock-out.
pub fn resolve_out_dir(opts: &RunOptions, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &opts.out_dir {
        return dir.clone();
    }
    if let Some(dir) = &config.out_dir {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("MEMCLOCK_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("memclock-out")
}
