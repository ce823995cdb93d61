//! Experiment entry points, one per `ExperimentKind`, plus the closed-form
//! clock table. Each entry point resolves its output directory, executes
//! its runs (in parallel when asked), writes trajectory CSVs where
//! trajectories exist, and always writes a JSON summary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::conservation::{
    discrete_decay_factor, flow_decay_factor, imbalance, scalar_norm_prediction, ImbalanceRecord,
};
use crate::diagnostics::{compute_clocks, memory_metric, order_fit, sensitivity_curve};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ExperimentKind};
use crate::harness::emit::{
    emit_csv, emit_summary, git_describe, CsvRow, ExperimentSummary, RunSummaryRow,
};
use crate::harness::runner::{
    parallel_map, resolve_out_dir, run_trajectory, RunOptions, RunOutcome, RunSpec, RunStatus,
};
use crate::models::{
    init_state, loss_and_product_grad, Batch, InitSpec, ModelShape, ModelState, QuadraticTask,
    Sampling,
};
use crate::numerics::{ols_fit, Matrix, Rng};
use crate::optimizers::{
    advance, step_gd, step_precond, Algorithm, OptimizerSpec, OptimizerState, Schedule,
};

/// Dispatch a validated config to its experiment.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    config.validate()?;
    match config.kind {
        ExperimentKind::Figure7 => run_figure7(config, opts),
        ExperimentKind::ClockTable => run_clock_table(config, opts),
        ExperimentKind::LeakageOrder => run_leakage_order(config, opts),
        ExperimentKind::DecayCheck => run_decay_check(config, opts),
        ExperimentKind::NormLaw => run_norm_law(config, opts),
        ExperimentKind::SigmaSweep => run_sigma_sweep(config, opts),
        ExperimentKind::MinibatchClock => run_minibatch_clock(config, opts),
    }
}

fn begin(config: &ExperimentConfig, opts: &RunOptions) -> Result<(PathBuf, Instant)> {
    config.validate()?;
    let out = resolve_out_dir(opts, config);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok((out, Instant::now()))
}

fn finish(
    out: &Path,
    kind: ExperimentKind,
    start: Instant,
    mut summary: ExperimentSummary,
) -> Result<ExperimentSummary> {
    summary.wall_time_s = start.elapsed().as_secs_f64();
    emit_summary(&out.join(format!("summary_{}.json", kind.name())), &summary)?;
    Ok(summary)
}

fn base_summary(config: &ExperimentConfig) -> ExperimentSummary {
    ExperimentSummary {
        config: config.clone(),
        git_describe: git_describe(),
        per_run: Vec::new(),
        mem_spread: None,
        wall_time_s: 0.0,
        details: serde_json::Value::Null,
    }
}

fn summary_row(outcome: &RunOutcome) -> RunSummaryRow {
    RunSummaryRow {
        label: outcome.label.clone(),
        sigma_w: outcome.sigma_w,
        seed: outcome.seed,
        final_loss: outcome.final_loss,
        final_d: outcome.final_d,
        final_norm: outcome.final_norm,
        status: outcome.status,
    }
}

/// Seeds to run: the override wins, otherwise the config list.
fn active_seeds(config: &ExperimentConfig, opts: &RunOptions) -> Vec<u64> {
    match opts.seed_override {
        Some(seed) => vec![seed],
        None => config.seeds.clone(),
    }
}

/// Initial state for one (sigma_w, seed) cell: explicit entries when the
/// config pins them, fan-in normal otherwise.
fn build_state(config: &ExperimentConfig, sigma_w: f64, seed: u64) -> Result<ModelState> {
    let spec = match &config.explicit_init {
        Some(values) => InitSpec::explicit(values.clone()),
        None => InitSpec::fan_in(sigma_w, seed),
    };
    init_state(&spec, &config.model)
}

fn product_dims(shape: &ModelShape) -> (usize, usize) {
    match shape {
        ModelShape::Scalar => (1, 1),
        ModelShape::TwoFactor { d_out, d_in, .. } => (*d_out, *d_in),
        ModelShape::Deep { dims } => (
            dims.last().copied().unwrap_or(0),
            dims.first().copied().unwrap_or(0),
        ),
    }
}

/// Synthetic regression data for matrix-family tasks: X (d_in x n) then
/// Y (d_out x n), filled row-major with standard normal entries from one
/// stream seeded by `data_seed`.
fn synth_data(shape: &ModelShape, n: usize, data_seed: u64) -> Result<(Matrix, Matrix)> {
    let (d_out, d_in) = product_dims(shape);
    if d_out == 0 || d_in == 0 || n == 0 {
        return Err(Error::Config {
            detail: format!("synthetic data needs positive dims, got {d_out}x{d_in}, n = {n}"),
        });
    }
    let mut rng = Rng::new(data_seed);
    let x = Matrix::from_fn(d_in, n, |_, _| rng.gaussian());
    let y = Matrix::from_fn(d_out, n, |_, _| rng.gaussian());
    Ok((x, y))
}

/// Task for the configured model: scalar targets (implicit x = 1) for the
/// scalar family, synthetic dense regression otherwise. The batch size
/// comes from the optimizer spec; None means the full dataset.
fn build_task(config: &ExperimentConfig) -> Result<QuadraticTask> {
    match &config.model {
        ModelShape::Scalar => {
            let batch = config.optimizer.batch.unwrap_or(config.targets.len());
            QuadraticTask::scalar(config.targets.clone(), batch, config.sampling.clone())
        }
        shape => {
            let (x, y) = synth_data(shape, config.n_samples, config.data_seed)?;
            let batch = config.optimizer.batch.unwrap_or(config.n_samples);
            QuadraticTask::dense(x, y, batch, config.sampling.clone())
        }
    }
}

fn run_all(jobs: Vec<RunSpec>, opts: &RunOptions) -> Result<Vec<RunOutcome>> {
    parallel_map(jobs, opts.threads, |spec| run_trajectory(&spec))
        .into_iter()
        .collect()
}

fn rows_to_csv(outcome: &RunOutcome) -> Vec<CsvRow> {
    outcome.rows.iter().map(CsvRow::from_row).collect()
}

// ---------------------------------------------------------------------------
// Clock table
// ---------------------------------------------------------------------------

/// Samples per epoch in the clock-table recipes.
pub const CLOCK_TABLE_N_TRAIN: u64 = 40_000;

/// One closed-form clock evaluation: a constant-rate recipe described by
/// epochs/batch/eta/lambda, its exact step count, and the three clocks at
/// the horizon. `highlight` names the clock the recipe is meant to probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClockTableRow {
    pub epochs: u64,
    pub batch: usize,
    pub eta: f64,
    pub lambda: f64,
    pub steps: u64,
    pub t_sgd: f64,
    pub t_l2: f64,
    pub t_adapt: f64,
    pub highlight: &'static str,
}

/// The five reference recipes: three varying epochs/batch/eta at zero decay
/// (probing the diffusion clock) and two varying lambda (probing the decay
/// clock). Step counts are exact: epochs * 40000 / batch divides evenly.
pub fn clock_table() -> Vec<ClockTableRow> {
    let recipes: [(u64, usize, f64, f64, &'static str); 5] = [
        (300, 128, 1e-3, 0.0, "t_sgd"),
        (5000, 128, 1e-3, 0.0, "t_sgd"),
        (300, 16, 1e-2, 0.0, "t_sgd"),
        (300, 128, 1e-2, 1e-3, "t_l2"),
        (300, 128, 1e-2, 5e-3, "t_l2"),
    ];
    recipes
        .iter()
        .map(|&(epochs, batch, eta, lambda, highlight)| {
            let total = epochs * CLOCK_TABLE_N_TRAIN;
            debug_assert_eq!(total % batch as u64, 0);
            let steps = total / batch as u64;
            let schedule = Schedule::constant(eta, steps);
            let clocks = compute_clocks(&schedule, batch, lambda, steps)
                .expect("constant schedule over its own horizon");
            ClockTableRow {
                epochs,
                batch,
                eta,
                lambda,
                steps,
                t_sgd: clocks.t_sgd,
                t_l2: clocks.t_l2,
                t_adapt: clocks.t_adapt,
                highlight,
            }
        })
        .collect()
}

/// Emit the clock table as a summary (the table itself is pure arithmetic;
/// the experiment wrapper only records it).
pub fn run_clock_table(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    let mut summary = base_summary(config);
    summary.details = json!({ "n_train": CLOCK_TABLE_N_TRAIN, "rows": clock_table() });
    finish(&out, ExperimentKind::ClockTable, start, summary)
}

// ---------------------------------------------------------------------------
// Toy landscape (four panels)
// ---------------------------------------------------------------------------

struct PanelDef {
    name: &'static str,
    algorithm: Algorithm,
    steps: u64,
    targets: Vec<f64>,
    batch: Option<usize>,
}

/// The four-panel toy landscape on the scalar model from the unbalanced
/// start (a, b) = (1, 6), at every step size in `figure7_etas`:
///
/// - (a) full-batch GD toward product 1, 20 steps: the imbalance barely
///   moves from its initial -35.
/// - (b) single-sample cyclic SGD over targets {0, 1, 2}, 50k steps: the
///   sampling noise erodes the imbalance toward 0.
/// - (c) full-batch Adam toward product 1, 5k steps: the imbalance drifts
///   and then stalls once the residual (and with it the update) collapses.
/// - (d) single-sample Adam with seeded uniform draws over {0, 1, 2},
///   200k steps: the persistent noise keeps the clock running and the
///   imbalance is forgotten.
///
/// Divergent runs are recorded as first-class results: the trajectory is
/// truncated at the failing step and the run is marked in its status
/// column rather than dropped.
pub fn run_figure7(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    let seed = active_seeds(config, opts)[0];
    let init = config
        .explicit_init
        .clone()
        .unwrap_or_else(|| vec![1.0, 6.0]);
    let panels = [
        PanelDef {
            name: "a",
            algorithm: Algorithm::Gd,
            steps: 20,
            targets: vec![1.0],
            batch: None,
        },
        PanelDef {
            name: "b",
            algorithm: Algorithm::Sgd,
            steps: 50_000,
            targets: vec![0.0, 1.0, 2.0],
            batch: Some(1),
        },
        PanelDef {
            name: "c",
            algorithm: Algorithm::Adam,
            steps: 5_000,
            targets: vec![1.0],
            batch: None,
        },
        PanelDef {
            name: "d",
            algorithm: Algorithm::Adam,
            steps: 200_000,
            targets: vec![0.0, 1.0, 2.0],
            batch: Some(1),
        },
    ];

    let mut jobs = Vec::new();
    let mut panel_of_job = Vec::new();
    for panel in &panels {
        for &eta in &config.figure7_etas {
            let sampling = match (panel.name, panel.batch) {
                // Panel (d) needs persistent sampling noise; cyclic
                // revisits average out too exactly to erase the imbalance.
                ("d", _) => Sampling::SeededUniform {
                    seed: seed ^ 0x5EED_0001,
                },
                (_, Some(_)) => Sampling::Cyclic,
                (_, None) => Sampling::FullBatch,
            };
            let batch = panel.batch.unwrap_or(panel.targets.len());
            let mut optimizer = OptimizerSpec::default();
            optimizer.algorithm = panel.algorithm;
            optimizer.schedule = Schedule::constant(eta, panel.steps);
            optimizer.batch = panel.batch;
            jobs.push(RunSpec {
                label: format!("{}_eta_{}", panel.name, eta),
                sigma_w: 1.0,
                seed,
                state: init_state(&InitSpec::explicit(init.clone()), &ModelShape::Scalar)?,
                task: QuadraticTask::scalar(panel.targets.clone(), batch, sampling)?,
                optimizer,
                record: config.record_stride.steps(panel.steps),
            });
            panel_of_job.push((panel.name, eta));
        }
    }

    let outcomes = run_all(jobs, opts)?;
    let mut summary = base_summary(config);
    let mut details = Vec::new();
    for (outcome, (panel, eta)) in outcomes.iter().zip(&panel_of_job) {
        emit_csv(
            &out.join(format!("figure7_{}.csv", outcome.label)),
            &rows_to_csv(outcome),
        )?;
        summary.per_run.push(summary_row(outcome));
        details.push(json!({
            "panel": panel,
            "eta": eta,
            "status": outcome.status.as_str(),
            "error": outcome.error,
            "final_d": outcome.final_d,
            "first_step_small_d": outcome.first_step_small_d,
            "last_delta_d": outcome.last_delta_d,
        }));
    }
    summary.details = json!({ "init": init, "runs": details });
    finish(&out, ExperimentKind::Figure7, start, summary)
}

// ---------------------------------------------------------------------------
// Leakage order in the step size
// ---------------------------------------------------------------------------

/// One-step imbalance drift |D_1 - D_0| against the step size, in log-log:
/// a shared-gradient GD step leaks only at second order (slope 2), while an
/// asymmetrically preconditioned step leaks at first order (slope 1).
pub fn run_leakage_order(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    let seed = active_seeds(config, opts)[0];
    let state = build_state(config, config.sigma_values[0], seed)?;
    let task = build_task(config)?;
    let d0 = imbalance(&state);
    let factors = state.stack().len();
    let scales: Vec<f64> = match &config.optimizer.preconditioner {
        Some(scales) => scales.clone(),
        // Default: scale the first declared factor by 2, the rest by 1;
        // any unequal adjacent pair produces the first-order leak.
        None => (0..factors)
            .map(|j| if j == 0 { 2.0 } else { 1.0 })
            .collect(),
    };
    let (_, g) = loss_and_product_grad(&state, &task, &Batch::Full)?;

    let mut gd_deltas = Vec::new();
    let mut precond_deltas = Vec::new();
    for &eta in &config.eta_grid {
        let (gd_next, _) = step_gd(&state, &g, eta, 0)?;
        gd_deltas.push(imbalance(&gd_next).distance(&d0)?);
        let (pc_next, _) = step_precond(&state, &g, eta, &scales, 0)?;
        precond_deltas.push(imbalance(&pc_next).distance(&d0)?);
    }
    let gd_fit = order_fit(&config.eta_grid, &gd_deltas)?;
    let precond_fit = order_fit(&config.eta_grid, &precond_deltas)?;

    let mut summary = base_summary(config);
    summary.details = json!({
        "eta_grid": config.eta_grid,
        "scales": scales,
        "gd_deltas": gd_deltas,
        "precond_deltas": precond_deltas,
        "gd_fit": gd_fit,
        "precond_fit": precond_fit,
    });
    finish(&out, ExperimentKind::LeakageOrder, start, summary)
}

// ---------------------------------------------------------------------------
// Flow-level decay checks
// ---------------------------------------------------------------------------

/// Step size used for the exponential-decay and forced-decay checks.
const DECAY_FLOW_H: f64 = 1e-3;

/// Runge-Kutta evidence for the flow-level imbalance law, on a two-factor
/// and a three-layer model:
///
/// - at lambda = 0 the integrator's imbalance drift shrinks like h^4
///   (the law says the exact flow conserves D, so all drift is integrator
///   truncation error);
/// - at lambda > 0 the imbalance contracts by exactly exp(-2*lambda*t);
/// - in discrete time with the gradient forced to zero, D contracts by
///   prod (1 - eta_k*lambda)^2 over any schedule.
pub fn run_decay_check(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    let seed = active_seeds(config, opts)[0];
    let lambda = if config.optimizer.lambda > 0.0 {
        config.optimizer.lambda
    } else {
        0.5
    };

    let setups: Vec<(&str, ModelShape)> = vec![
        (
            "two_factor",
            ModelShape::TwoFactor {
                d_out: 4,
                r: 3,
                d_in: 4,
            },
        ),
        (
            "deep_l3",
            ModelShape::Deep {
                dims: vec![4, 3, 3, 2],
            },
        ),
    ];

    let mut families = Vec::new();
    let mut decay_report = serde_json::Value::Null;
    for (name, shape) in &setups {
        let state = init_state(&InitSpec::fan_in(1.0, seed), shape)?;
        let (x, y) = synth_data(shape, 16, config.data_seed)?;
        let task = QuadraticTask::dense_full(x, y)?;
        let d0 = imbalance(&state);

        // Part 1: lambda = 0 drift order across the h grid.
        let mut drifts = Vec::new();
        for &h in &config.flow_h_grid {
            let flow = crate::optimizers::flow_integrate(&state, &task, 0.0, 1.0, h)?;
            drifts.push(
                flow.imbalances
                    .last()
                    .expect("flow records at least t = 0")
                    .distance(&d0)?,
            );
        }
        let ratios: Vec<f64> = drifts
            .windows(2)
            .map(|w| {
                if w[1] > 0.0 {
                    w[0] / w[1]
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        // A log-log slope needs at least 4 grid points; the halving
        // ratios carry the order evidence for shorter grids.
        let order = if config.flow_h_grid.len() >= 4 {
            Some(order_fit(&config.flow_h_grid, &drifts)?)
        } else {
            None
        };
        families.push(json!({
            "family": name,
            "h_grid": config.flow_h_grid,
            "drifts": drifts,
            "halving_ratios": ratios,
            "order_fit": order,
        }));

        // Part 2: exponential decay at lambda (reported for the two-factor
        // family; the law is family-independent).
        if *name == "two_factor" {
            let flow = crate::optimizers::flow_integrate(&state, &task, lambda, 1.0, DECAY_FLOW_H)?;
            let predicted = d0.scaled(flow_decay_factor(lambda, 1.0));
            let err = flow
                .imbalances
                .last()
                .expect("flow records at least t = 0")
                .distance(&predicted)?;
            let rel = err / d0.total_fro().max(f64::MIN_POSITIVE);
            decay_report = json!({
                "lambda": lambda,
                "h": DECAY_FLOW_H,
                "t_end": 1.0,
                "rel_error": rel,
            });
        }
    }

    // Part 3: discrete forced decay. A zero task makes every gradient
    // vanish, so each step is the pure contraction W <- (1 - eta_k*lambda)W
    // and D must track the squared product of the contractions.
    let shape = ModelShape::TwoFactor {
        d_out: 4,
        r: 3,
        d_in: 4,
    };
    let state0 = init_state(&InitSpec::fan_in(1.0, seed), &shape)?;
    let mut task = QuadraticTask::dense_full(Matrix::zeros(4, 4), Matrix::zeros(4, 4))?;
    let mut spec = OptimizerSpec::default();
    spec.algorithm = Algorithm::GdWeightDecay;
    spec.lambda = lambda;
    spec.schedule = Schedule::cosine(1e-2, 200, 0.1);
    let mut opt_state = OptimizerState::for_algorithm(spec.algorithm, &state0);
    let mut state = state0.clone();
    for k in 0..spec.schedule.total_steps {
        state = advance(&state, &mut task, &spec, &mut opt_state, k)?.0;
    }
    let d0 = imbalance(&state0);
    let predicted = d0.scaled(discrete_decay_factor(lambda, &spec.schedule.etas()));
    let discrete_rel =
        imbalance(&state).distance(&predicted)? / d0.total_fro().max(f64::MIN_POSITIVE);

    let mut summary = base_summary(config);
    summary.details = json!({
        "families": families,
        "decay": decay_report,
        "discrete": {
            "lambda": lambda,
            "schedule": "cosine(1e-2, 200, 0.1)",
            "rel_error": discrete_rel,
        },
    });
    finish(&out, ExperimentKind::DecayCheck, start, summary)
}

// ---------------------------------------------------------------------------
// Converged-norm law
// ---------------------------------------------------------------------------

/// Loss below which a norm-law trial counts as converged.
const NORM_LAW_LOSS_THRESHOLD: f64 = 1e-16;

/// Random-start scalar trials of the conservation prediction for the
/// converged norm: a^2 + b^2 -> sqrt(D_0^2 + 4 p*^2) under plain GD.
///
/// Starts are built from sampled (D_0, initial product s): a_0 is the
/// positive root of a^2 - s^2/a^2 = D_0, so the trials cover |D_0| up to 50
/// with products in [0.5, 1.5]. Trial 0 is pinned to (-35, 1.5), the same
/// imbalance as the (1, 6) toy-landscape start. The prediction uses the
/// *measured* initial imbalance, so construction roundoff cancels.
pub fn run_norm_law(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    let p_star = config.targets.first().copied().unwrap_or(1.0);
    if !p_star.is_finite() || p_star <= 0.0 {
        return Err(Error::Config {
            detail: format!("norm law needs a positive finite target, got {p_star}"),
        });
    }
    let mut rng = Rng::new(config.data_seed);
    let mut cases = vec![(-35.0, 1.5)];
    while cases.len() < config.norm_law_trials {
        let d0 = (rng.uniform() * 2.0 - 1.0) * 50.0;
        let s = 0.5 + rng.uniform();
        cases.push((d0, s));
    }

    let cap = config.optimizer.schedule.total_steps;
    let eta = config.optimizer.schedule.eta0;
    let mut summary = base_summary(config);
    let mut trials = Vec::new();
    let mut max_rel: f64 = 0.0;
    for (idx, &(d0_target, s)) in cases.iter().enumerate() {
        let a0 = ((d0_target + (d0_target * d0_target + 4.0 * s * s).sqrt()) / 2.0).sqrt();
        let b0 = s / a0;
        let state0 = init_state(&InitSpec::explicit(vec![a0, b0]), &ModelShape::Scalar)?;
        let d0 = imbalance(&state0).scalar().expect("scalar family");

        let mut task = QuadraticTask::scalar_full(vec![p_star])?;
        let spec = OptimizerSpec {
            schedule: Schedule::constant(eta, cap),
            ..OptimizerSpec::default()
        };
        let mut opt_state = OptimizerState::for_algorithm(spec.algorithm, &state0);
        let mut state = state0;
        let mut steps = 0u64;
        let mut converged = false;
        for k in 0..cap {
            let (next, rec) = advance(&state, &mut task, &spec, &mut opt_state, k)?;
            state = next;
            steps = k + 1;
            if rec.loss < NORM_LAW_LOSS_THRESHOLD {
                converged = true;
                break;
            }
        }

        let measured = state.sq_norm();
        let predicted = scalar_norm_prediction(d0, p_star).predicted_sq_norm;
        let rel = (measured - predicted).abs() / predicted;
        max_rel = max_rel.max(rel);
        let (final_loss, _) = loss_and_product_grad(&state, &task, &Batch::Full)?;
        summary.per_run.push(RunSummaryRow {
            label: format!("trial_{idx}"),
            sigma_w: 1.0,
            seed: idx as u64,
            final_loss,
            final_d: imbalance(&state).scalar().expect("scalar family"),
            final_norm: state.norm_total(),
            status: if converged {
                RunStatus::Ok
            } else {
                RunStatus::Failed
            },
        });
        trials.push(json!({
            "d0": d0,
            "s": s,
            "steps": steps,
            "converged": converged,
            "final_loss": final_loss,
            "sq_norm": measured,
            "predicted_sq_norm": predicted,
            "rel_error": rel,
        }));
    }

    summary.details = json!({
        "eta": eta,
        "p_star": p_star,
        "loss_threshold": NORM_LAW_LOSS_THRESHOLD,
        "max_rel_error": max_rel,
        "trials": trials,
    });
    finish(&out, ExperimentKind::NormLaw, start, summary)
}

// ---------------------------------------------------------------------------
// Sigma sweep
// ---------------------------------------------------------------------------

/// Sweep the initialization scale sigma_w (and seeds) under one training
/// recipe, then ask how much of sigma_w survives training:
///
/// - the memory spread: max-minus-min over sigma of the seed-averaged final
///   total norm (zero = the run forgot its initialization);
/// - the sensitivity curve |beta(t)|: the absolute regression slope of the
///   total norm on sigma_w at every recorded checkpoint, against the
///   accumulated clock T_adapt, written to sensitivity.csv.
///
/// Runs that diverge or fail are excluded from both aggregates and listed
/// in the summary details.
pub fn run_sigma_sweep(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    let seeds = active_seeds(config, opts);
    let total = config.optimizer.schedule.total_steps;
    let record = config.record_stride.steps(total);

    let mut jobs = Vec::new();
    for &sigma in &config.sigma_values {
        for &seed in &seeds {
            jobs.push(RunSpec {
                label: format!("sigma_{sigma}_seed_{seed}"),
                sigma_w: sigma,
                seed,
                state: build_state(config, sigma, seed)?,
                task: build_task(config)?,
                optimizer: config.optimizer.clone(),
                record: record.clone(),
            });
        }
    }
    let outcomes = run_all(jobs, opts)?;

    let mut summary = base_summary(config);
    let mut failed = Vec::new();
    for outcome in &outcomes {
        emit_csv(
            &out.join(format!("sweep_{}.csv", outcome.label)),
            &rows_to_csv(outcome),
        )?;
        summary.per_run.push(summary_row(outcome));
        if outcome.status != RunStatus::Ok {
            failed.push(json!({
                "label": outcome.label,
                "status": outcome.status.as_str(),
                "error": outcome.error,
            }));
        }
    }

    // Memory spread over final total norms, healthy runs only.
    let mut per_sigma: Vec<(f64, Vec<f64>)> = Vec::new();
    for &sigma in &config.sigma_values {
        let finals: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.sigma_w == sigma && o.status == RunStatus::Ok)
            .map(|o| o.final_norm)
            .collect();
        if !finals.is_empty() {
            per_sigma.push((sigma, finals));
        }
    }
    if per_sigma.is_empty() {
        return Err(Error::InsufficientData {
            detail: "every sweep run failed; no memory metric".to_string(),
        });
    }
    let memory = memory_metric("final_norm", &per_sigma)?;
    summary.mem_spread = Some(memory.spread);

    // Sensitivity curve over the recorded checkpoints, again from healthy
    // runs (they all share the full record set, so rows align by index).
    let mut sensitivity_file = None;
    let ok_sigmas: Vec<f64> = per_sigma.iter().map(|(s, _)| *s).collect();
    if ok_sigmas.len() >= 2 {
        let reference = outcomes
            .iter()
            .find(|o| o.status == RunStatus::Ok)
            .expect("per_sigma nonempty implies an ok run");
        let clock: Vec<f64> = reference.rows.iter().map(|r| r.t_adapt).collect();
        let mut series = Vec::new();
        for &sigma in &ok_sigmas {
            let runs: Vec<&RunOutcome> = outcomes
                .iter()
                .filter(|o| o.sigma_w == sigma && o.status == RunStatus::Ok)
                .collect();
            let means: Vec<f64> = (0..clock.len())
                .map(|i| {
                    runs.iter().map(|o| o.rows[i].norm_total()).sum::<f64>() / runs.len() as f64
                })
                .collect();
            series.push((sigma, means));
        }
        let curve = sensitivity_curve(&clock, &series)?;
        let mut text = String::from("t_adapt,abs_beta\n");
        for (t, beta) in curve.clock.iter().zip(&curve.abs_beta) {
            text.push_str(&format!("{t},{beta}\n"));
        }
        let path = out.join("sensitivity.csv");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        sensitivity_file = Some("sensitivity.csv".to_string());
    }

    summary.details = json!({
        "memory": memory,
        "metric": "final_norm",
        "failed": failed,
        "sensitivity_csv": sensitivity_file,
    });
    finish(&out, ExperimentKind::SigmaSweep, start, summary)
}

// ---------------------------------------------------------------------------
// Minibatch clock
// ---------------------------------------------------------------------------

/// Monte-Carlo measurement of the sampling-noise component of the expected
/// one-step imbalance change at a frozen state, against 1/batch-size.
///
/// For each batch size b, `mc_batches` seeded uniform draws produce
/// component(b, eta) = || mean_i [D(step(G_i)) - D_0] - [D(step(G_hat)) - D_0] ||,
/// where G_hat is the empirical mean gradient of the same draws. Using
/// G_hat (rather than the full-batch gradient) as the reference cancels the
/// O(eta) term of the Monte-Carlo error exactly, so the component is a pure
/// second-order quantity: it scales like eta^2 (checked by replaying the
/// same draws at eta/2) and like 1/b (the variance of a b-sample mean).
/// The full-batch row goes through the same pipeline and is identically
/// zero by construction.
pub fn run_minibatch_clock(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ExperimentSummary> {
    let (out, start) = begin(config, opts)?;
    if matches!(config.model, ModelShape::Scalar) {
        return Err(Error::Config {
            detail: "minibatch clock needs a matrix-family model (two_factor or deep)".to_string(),
        });
    }
    let seed = active_seeds(config, opts)[0];
    let state = build_state(config, config.sigma_values[0], seed)?;
    let n = config.n_samples;
    let (x, y) = synth_data(&config.model, n, config.data_seed)?;
    let eta = config.optimizer.schedule.eta0;
    let d0 = imbalance(&state);

    // Imbalance change of one GD step along gradient g, as raw pair
    // matrices so draws can be averaged.
    let delta_for = |g: &Matrix, eta: f64| -> Result<Vec<Matrix>> {
        let (next, _) = step_gd(&state, g, eta, 0)?;
        Ok(imbalance(&next)
            .pairs()
            .iter()
            .zip(d0.pairs())
            .map(|(after, before)| after.sub(before))
            .collect())
    };

    // component = || mean of per-draw deltas - delta at the mean gradient ||
    let component_of = |task: &mut QuadraticTask, draws: usize| -> Result<(f64, f64)> {
        let mut sum_g: Option<Matrix> = None;
        let mut sums_eta: Option<Vec<Matrix>> = None;
        let mut sums_half: Option<Vec<Matrix>> = None;
        let accumulate = |sums: &mut Option<Vec<Matrix>>, delta: Vec<Matrix>| match sums {
            Some(acc) => {
                for (a, d) in acc.iter_mut().zip(&delta) {
                    *a = a.add(d);
                }
            }
            None => *sums = Some(delta),
        };
        for _ in 0..draws {
            let batch = task.next_batch();
            let (_, g) = loss_and_product_grad(&state, task, &batch)?;
            accumulate(&mut sums_eta, delta_for(&g, eta)?);
            accumulate(&mut sums_half, delta_for(&g, eta / 2.0)?);
            sum_g = Some(match sum_g {
                Some(acc) => acc.add(&g),
                None => g,
            });
        }
        let scale = 1.0 / draws as f64;
        let g_hat = sum_g.expect("draws >= 1").scale(scale);
        let mean = |sums: Vec<Matrix>| {
            ImbalanceRecord::from_pairs(sums.iter().map(|m| m.scale(scale)).collect())
        };
        let mean_eta = mean(sums_eta.expect("draws >= 1"));
        let mean_half = mean(sums_half.expect("draws >= 1"));
        let reference_eta = ImbalanceRecord::from_pairs(delta_for(&g_hat, eta)?);
        let reference_half = ImbalanceRecord::from_pairs(delta_for(&g_hat, eta / 2.0)?);
        Ok((
            mean_eta.distance(&reference_eta)?,
            mean_half.distance(&reference_half)?,
        ))
    };

    let mut grid = Vec::new();
    let mut inv_b = Vec::new();
    let mut components = Vec::new();
    for &b in &config.batch_grid {
        if b == 0 || b > n {
            return Err(Error::Config {
                detail: format!("batch size {b} outside 1..={n}"),
            });
        }
        let sampler_seed = config.data_seed ^ (0x5EED_0000 + b as u64);
        let mut task = QuadraticTask::dense(
            x.clone(),
            y.clone(),
            b,
            Sampling::SeededUniform { seed: sampler_seed },
        )?;
        let (component, component_half) = component_of(&mut task, config.mc_batches)?;
        inv_b.push(1.0 / b as f64);
        components.push(component);
        grid.push(json!({
            "b": b,
            "inv_b": 1.0 / b as f64,
            "component": component,
            "b_times_component": b as f64 * component,
            "component_half_eta": component_half,
            "eta_ratio": if component_half > 0.0 { component / component_half } else { f64::INFINITY },
        }));
    }

    // Full-batch reference through the same pipeline: every draw is the
    // whole dataset, so the mean delta equals the reference delta bitwise.
    let mut full_task = QuadraticTask::dense_full(x.clone(), y.clone())?;
    let (full_component, _) = component_of(&mut full_task, 1)?;

    let fit = ols_fit(&inv_b, &components)?;
    let mut sorted: Vec<(usize, f64)> = config
        .batch_grid
        .iter()
        .copied()
        .zip(components.iter().copied())
        .collect();
    sorted.sort_by_key(|(b, _)| *b);
    let mut halving_ratios = Vec::new();
    for i in 0..sorted.len() {
        if let Some(&(b2, c2)) = sorted.iter().find(|(b2, _)| *b2 == 2 * sorted[i].0) {
            halving_ratios.push(json!({
                "b": sorted[i].0,
                "double": b2,
                "ratio": if c2 > 0.0 { sorted[i].1 / c2 } else { f64::INFINITY },
            }));
        }
    }

    let mut summary = base_summary(config);
    summary.details = json!({
        "eta": eta,
        "n_samples": n,
        "mc_batches": config.mc_batches,
        "grid": grid,
        "full_batch_component": full_component,
        "slope_vs_inv_b": fit.slope,
        "intercept": fit.intercept,
        "halving_ratios": halving_ratios,
    });
    finish(&out, ExperimentKind::MinibatchClock, start, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RecordStride;

    fn opts_with(dir: &Path) -> RunOptions {
        RunOptions {
            out_dir: Some(dir.to_path_buf()),
            threads: 2,
            seed_override: None,
        }
    }

    #[test]
    fn clock_table_matches_closed_forms() {
        let rows = clock_table();
        assert_eq!(rows.len(), 5);
        // Constant schedules: T_sgd = K*eta^2/b, T_l2 = lambda*K*eta,
        // evaluated here from the exact decimal expansions.
        let expected_t_sgd = [7.32421875e-4, 1.220703125e-2, 4.6875];
        for (row, want) in rows.iter().take(3).zip(expected_t_sgd) {
            assert!(
                (row.t_sgd - want).abs() <= 1e-9 * want,
                "t_sgd {} vs {want}",
                row.t_sgd
            );
            assert_eq!(row.t_l2, 0.0);
        }
        let expected_t_l2 = [0.9375, 4.6875];
        for (row, want) in rows.iter().skip(3).zip(expected_t_l2) {
            assert!(
                (row.t_l2 - want).abs() <= 1e-9 * want,
                "t_l2 {} vs {want}",
                row.t_l2
            );
        }
        // Same data volume, different batch size: smaller batches tick the
        // diffusion clock faster at fixed eta.
        assert!(rows[2].t_sgd > rows[0].t_sgd * 100.0);
    }

    #[test]
    fn clock_table_experiment_writes_summary() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::for_kind(ExperimentKind::ClockTable);
        let summary = run_clock_table(&config, &opts_with(dir.path())).unwrap();
        assert!(summary.per_run.is_empty());
        assert!(dir.path().join("summary_clock_table.json").exists());
        let rows = summary.details["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[1]["steps"].as_u64(), Some(1_562_500));
    }

    #[test]
    fn leakage_order_recovers_both_slopes() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::for_kind(ExperimentKind::LeakageOrder);
        let summary = run_leakage_order(&config, &opts_with(dir.path())).unwrap();
        let gd = summary.details["gd_fit"]["slope"].as_f64().unwrap();
        let pc = summary.details["precond_fit"]["slope"].as_f64().unwrap();
        assert!((gd - 2.0).abs() < 0.1, "gd slope {gd}");
        assert!((pc - 1.0).abs() < 0.1, "precond slope {pc}");
    }

    #[test]
    fn decay_check_confirms_order_and_decay() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::for_kind(ExperimentKind::DecayCheck);
        let summary = run_decay_check(&config, &opts_with(dir.path())).unwrap();
        for family in summary.details["families"].as_array().unwrap() {
            for ratio in family["halving_ratios"].as_array().unwrap() {
                assert!(ratio.as_f64().unwrap() >= 8.0, "{}", family);
            }
            // Default 3-point h grid: the slope fit is skipped.
            assert!(family["order_fit"].is_null());
        }
        assert!(summary.details["decay"]["rel_error"].as_f64().unwrap() < 1e-6);
        assert!(summary.details["discrete"]["rel_error"].as_f64().unwrap() < 1e-10);
    }

    #[test]
    fn norm_law_trials_match_prediction() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::NormLaw);
        config.norm_law_trials = 3;
        let summary = run_norm_law(&config, &opts_with(dir.path())).unwrap();
        assert!(summary.per_run.iter().all(|r| r.status == RunStatus::Ok));
        let max_rel = summary.details["max_rel_error"].as_f64().unwrap();
        assert!(max_rel < 1e-5, "max rel {max_rel}");
        // Trial 0 is the pinned deep-imbalance start.
        assert_eq!(summary.details["trials"][0]["s"].as_f64(), Some(1.5));
    }

    #[test]
    fn sigma_sweep_produces_spread_sensitivity_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::SigmaSweep);
        config.sigma_values = vec![0.5, 1.0];
        config.seeds = vec![0, 1];
        config.optimizer.schedule = Schedule::constant(1e-4, 200);
        config.record_stride = RecordStride::Every(50);
        let summary = run_sigma_sweep(&config, &opts_with(dir.path())).unwrap();
        assert_eq!(summary.per_run.len(), 4);
        let spread = summary.mem_spread.unwrap();
        assert!(
            spread > 0.0,
            "short GD run must remember sigma, got {spread}"
        );
        assert!(dir.path().join("sweep_sigma_0.5_seed_1.csv").exists());
        let sensitivity = std::fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap();
        let mut lines = sensitivity.lines();
        assert_eq!(lines.next(), Some("t_adapt,abs_beta"));
        // 0, 50, 100, 150, 200 -> five checkpoints.
        assert_eq!(lines.count(), 5);
        // Larger sigma, larger norm: beta stays positive early on.
        assert!(summary.details["memory"]["spread"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn sigma_sweep_with_all_runs_failing_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::SigmaSweep);
        config.model = ModelShape::Scalar;
        config.targets = vec![1e308]; // non-finite gradient on step one
        config.sigma_values = vec![0.5, 1.0];
        config.seeds = vec![0];
        config.optimizer.schedule = Schedule::constant(1e-3, 10);
        let err = run_sigma_sweep(&config, &opts_with(dir.path())).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }), "{err}");
    }

    #[test]
    fn sweep_reruns_are_byte_identical() {
        let run = |dir: &Path| {
            let mut config = ExperimentConfig::for_kind(ExperimentKind::SigmaSweep);
            config.sigma_values = vec![0.5, 2.0];
            config.seeds = vec![3];
            config.optimizer.schedule = Schedule::constant(1e-4, 100);
            run_sigma_sweep(&config, &opts_with(dir)).unwrap();
            std::fs::read(dir.join("sweep_sigma_2_seed_3.csv")).unwrap()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        assert_eq!(run(dir_a.path()), run(dir_b.path()));
    }

    #[test]
    fn minibatch_clock_scales_with_inv_b_and_eta_squared() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::MinibatchClock);
        config.batch_grid = vec![4, 16];
        config.mc_batches = 400;
        let summary = run_minibatch_clock(&config, &opts_with(dir.path())).unwrap();
        let grid = summary.details["grid"].as_array().unwrap();
        let c4 = grid[0]["component"].as_f64().unwrap();
        let c16 = grid[1]["component"].as_f64().unwrap();
        assert!(c4 > 0.0 && c16 > 0.0);
        let ratio = c4 / c16;
        assert!(ratio > 2.0 && ratio < 8.0, "1/b ratio {ratio} not near 4");
        for point in grid {
            let eta_ratio = point["eta_ratio"].as_f64().unwrap();
            assert!(
                (eta_ratio - 4.0).abs() < 0.5,
                "eta^2 scaling broke: {eta_ratio}"
            );
        }
        assert_eq!(
            summary.details["full_batch_component"].as_f64().unwrap(),
            0.0
        );
        assert!(summary.details["slope_vs_inv_b"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn minibatch_clock_rejects_scalar_models_and_bad_batches() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::MinibatchClock);
        config.model = ModelShape::Scalar;
        assert!(run_minibatch_clock(&config, &opts_with(dir.path())).is_err());

        let mut config = ExperimentConfig::for_kind(ExperimentKind::MinibatchClock);
        config.batch_grid = vec![1000];
        assert!(run_minibatch_clock(&config, &opts_with(dir.path())).is_err());
    }

    #[test]
    fn figure7_quick_pass_produces_panels() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::Figure7);
        config.figure7_etas = vec![0.01];
        let summary = run_figure7(&config, &opts_with(dir.path())).unwrap();
        assert_eq!(summary.per_run.len(), 4);
        for label in ["a_eta_0.01", "b_eta_0.01", "c_eta_0.01", "d_eta_0.01"] {
            assert!(
                dir.path().join(format!("figure7_{label}.csv")).exists(),
                "{label}"
            );
        }
        // Panel (a): 20 GD steps leave the deep imbalance essentially
        // untouched near -35.
        let a = &summary.per_run[0];
        assert!(a.final_d > -36.0 && a.final_d < -33.0, "{}", a.final_d);
        // Panel (b): cyclic single-sample SGD erodes it to ~0.
        let b = &summary.per_run[1];
        assert!(b.final_d.abs() < 0.5, "{}", b.final_d);
        // Panel (d): uniform single-sample Adam forgets it completely.
        let d = &summary.per_run[3];
        assert!(d.final_d.abs() < 0.5, "{}", d.final_d);
        let runs = summary.details["runs"].as_array().unwrap();
        assert!(runs[3]["first_step_small_d"].as_u64().is_some());
    }

    #[test]
    fn run_experiment_dispatches_on_kind() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig::for_kind(ExperimentKind::ClockTable);
        let summary = run_experiment(&config, &opts_with(dir.path())).unwrap();
        assert!(summary.details["rows"].is_array());
        assert!(summary.wall_time_s >= 0.0);
    }

    #[test]
    fn seed_override_narrows_the_seed_list() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::for_kind(ExperimentKind::SigmaSweep);
        config.sigma_values = vec![1.0, 2.0];
        config.seeds = vec![0, 1, 2];
        config.optimizer.schedule = Schedule::constant(1e-4, 50);
        let mut opts = opts_with(dir.path());
        opts.seed_override = Some(9);
        let summary = run_sigma_sweep(&config, &opts).unwrap();
        assert_eq!(summary.per_run.len(), 2);
        assert!(summary.per_run.iter().all(|r| r.seed == 9));
    }
}
