//! Experiment configuration: one flat, serde-friendly struct that fully
//! determines an experiment, plus the trajectory recording policy.
//!
//! A config round-trips losslessly through JSON (floats are written in
//! shortest round-trip form), so the emitted summary can embed the exact
//! configuration that produced it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelShape, Sampling};
use crate::optimizers::OptimizerSpec;

/// Which experiment to run. Each kind maps to one `run_*` entry point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Four-panel toy landscape: GD, cyclic SGD, full-batch Adam, and
    /// minibatch Adam on the scalar model from a fixed unbalanced start.
    Figure7,
    /// Closed-form clock values for a small table of training recipes.
    ClockTable,
    /// Log-log order of the per-step imbalance drift in the step size,
    /// for plain GD (slope 2) and preconditioned GD (slope 1).
    LeakageOrder,
    /// Runge-Kutta checks of the flow-level imbalance law: fourth-order
    /// drift at lambda = 0 and exact exponential decay at lambda > 0.
    DecayCheck,
    /// Converged-norm law on the scalar model over random unbalanced
    /// starts: a^2 + b^2 -> sqrt(D_0^2 + 4 p*^2).
    NormLaw,
    /// Initialization-memory sweep over sigma_w and seeds, with the
    /// spread metric and the per-checkpoint sensitivity curve.
    SigmaSweep,
    /// Monte-Carlo estimate of the sampling-noise component of E[Delta D]
    /// at a frozen state, regressed against 1/b.
    MinibatchClock,
}

impl ExperimentKind {
    /// Stable lowercase name, used in output filenames.
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Figure7 => "figure7",
            ExperimentKind::ClockTable => "clock_table",
            ExperimentKind::LeakageOrder => "leakage_order",
            ExperimentKind::DecayCheck => "decay_check",
            ExperimentKind::NormLaw => "norm_law",
            ExperimentKind::SigmaSweep => "sigma_sweep",
            ExperimentKind::MinibatchClock => "minibatch_clock",
        }
    }
}

/// Which trajectory steps get a recorded row.
///
/// Recorded steps always include 0 (the initial state) and the final step,
/// and every run of a given config records the same step set, so rows are
/// comparable across seeds and sigma values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStride {
    /// Every step when the horizon is at most 10_000 steps, otherwise
    /// 1000 log-spaced checkpoints.
    #[default]
    Auto,
    /// A row at every step.
    EveryStep,
    /// A row every `n` steps, plus the final step.
    Every(u64),
    /// `n` log-spaced checkpoints from step 1 to the final step, plus 0.
    Log(usize),
}

impl RecordStride {
    /// The set of steps to record for a horizon of `total` steps.
    pub fn steps(&self, total: u64) -> BTreeSet<u64> {
        match self {
            RecordStride::Auto => {
                if total <= 10_000 {
                    RecordStride::EveryStep.steps(total)
                } else {
                    RecordStride::Log(1000).steps(total)
                }
            }
            RecordStride::EveryStep => (0..=total).collect(),
            RecordStride::Every(n) => {
                let n = (*n).max(1);
                let mut steps: BTreeSet<u64> = (0..=total).step_by(n as usize).collect();
                steps.insert(total);
                steps
            }
            RecordStride::Log(points) => {
                let mut steps = BTreeSet::new();
                steps.insert(0);
                steps.insert(total);
                if total >= 1 && *points >= 2 {
                    let log_end = (total as f64).ln();
                    for i in 0..*points {
                        let t = log_end * (i as f64) / (*points as f64 - 1.0);
                        steps.insert(t.exp().round() as u64);
                    }
                }
                steps
            }
        }
    }
}

/// Complete description of one experiment. Every field has a default, so
/// a config file only needs the fields it overrides; unknown fields are
/// rejected to catch typos.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment selector. Default: `figure7`.
    pub kind: ExperimentKind,
    /// Model family and dimensions. Default: scalar.
    pub model: ModelShape,
    /// Initialization scales to sweep. Runs are built for every
    /// (sigma_w, seed) pair. Default: `[1.0]`.
    pub sigma_values: Vec<f64>,
    /// Initialization seeds. Default: `[0]`.
    pub seeds: Vec<u64>,
    /// Literal initial entries in declaration order (a, b / U then V /
    /// W_1..W_L, row-major). When set, it overrides the fan-in scheme and
    /// `sigma_values` only labels the runs. Default: none.
    pub explicit_init: Option<Vec<f64>>,
    /// Optimizer recipe: algorithm, schedule, batch size, lambda, and the
    /// algorithm-specific knobs. Default: GD at 1e-3 for 1000 steps.
    pub optimizer: OptimizerSpec,
    /// Minibatch sampling policy. Default: full batch.
    pub sampling: Sampling,
    /// Scalar-model targets y_i (implicit input x = 1). Default: `[1.0]`.
    pub targets: Vec<f64>,
    /// Sample count for synthetic dense tasks (matrix models). Default: 64.
    pub n_samples: usize,
    /// Seed of the synthetic data stream (X then Y, row-major, standard
    /// normal entries). Default: 777.
    pub data_seed: u64,
    /// Trajectory recording policy. Default: `auto`.
    pub record_stride: RecordStride,
    /// Output directory override for this experiment. Default: none (the
    /// runner falls back to MEMCLOCK_OUT_DIR, then ./memclock-out).
    pub out_dir: Option<String>,
    /// Step sizes for the toy-landscape panels. Default: `[0.01, 0.04]`.
    pub figure7_etas: Vec<f64>,
    /// Batch sizes for the minibatch clock (full batch is always added as
    /// the zero-noise reference). Default: `[1, 2, 4, 8, 16]`.
    pub batch_grid: Vec<usize>,
    /// Monte-Carlo batch draws per grid point. Default: 10_000; values
    /// below 100 are rejected as statistically meaningless.
    pub mc_batches: usize,
    /// Step sizes for the leakage order fit. Default: 8 log-spaced values
    /// from 1e-5 to 1e-3.
    pub eta_grid: Vec<f64>,
    /// Runge-Kutta step sizes for the drift-order study, largest first.
    /// Default: `[1e-2, 5e-3, 2.5e-3]`.
    pub flow_h_grid: Vec<f64>,
    /// Random (D_0, product-target) trials for the norm law. Default: 20.
    pub norm_law_trials: usize,
}

/// Eight log-spaced step sizes from 1e-5 to 1e-3 inclusive.
pub fn default_eta_grid() -> Vec<f64> {
    let (lo, hi, n) = (1e-5f64, 1e-3f64, 8);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Figure7,
            model: ModelShape::Scalar,
            sigma_values: vec![1.0],
            seeds: vec![0],
            explicit_init: None,
            optimizer: OptimizerSpec::default(),
            sampling: Sampling::FullBatch,
            targets: vec![1.0],
            n_samples: 64,
            data_seed: 777,
            record_stride: RecordStride::Auto,
            out_dir: None,
            figure7_etas: vec![0.01, 0.04],
            batch_grid: vec![1, 2, 4, 8, 16],
            mc_batches: 10_000,
            eta_grid: default_eta_grid(),
            flow_h_grid: vec![1e-2, 5e-3, 2.5e-3],
            norm_law_trials: 20,
        }
    }
}

impl ExperimentConfig {
    /// A default config for the given kind; experiment-specific fields
    /// keep their struct defaults, which every kind accepts.
    pub fn for_kind(kind: ExperimentKind) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.kind = kind;
        match kind {
            // The sweep defaults to the two-factor showcase: three scales,
            // three seeds, plain GD at a small step for 20k steps.
            ExperimentKind::SigmaSweep => {
                config.model = ModelShape::TwoFactor {
                    d_out: 8,
                    r: 4,
                    d_in: 8,
                };
                config.sigma_values = vec![0.5, 1.0, 2.0];
                config.seeds = vec![0, 1, 2];
                config.optimizer.schedule = crate::optimizers::Schedule::constant(1e-4, 20_000);
            }
            // The minibatch clock freezes a two-factor state and probes
            // the gradient sampling noise around it.
            ExperimentKind::MinibatchClock => {
                config.model = ModelShape::TwoFactor {
                    d_out: 8,
                    r: 4,
                    d_in: 8,
                };
                config.optimizer.schedule = crate::optimizers::Schedule::constant(1e-3, 1);
            }
            // The order study probes one step from a fixed unbalanced
            // scalar start.
            ExperimentKind::LeakageOrder => {
                config.explicit_init = Some(vec![1.5, 0.5]);
            }
            // Norm-law trials run small-step GD to machine-precision
            // convergence; the horizon is a cap, not a target.
            ExperimentKind::NormLaw => {
                config.optimizer.schedule = crate::optimizers::Schedule::constant(1e-4, 10_000_000);
            }
            _ => {}
        }
        config
    }

    /// Parse a config from JSON text.
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Serialize to pretty JSON (always ends with a newline).
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    /// Read and validate a config file.
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    /// Cross-field checks shared by every experiment kind.
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.sigma_values.is_empty() {
            return Err(Error::Config {
                detail: "sigma_values must not be empty".to_string(),
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::Config {
                detail: "seeds must not be empty".to_string(),
            });
        }
        for &s in &self.sigma_values {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::Config {
                    detail: format!("sigma_values must be positive finite reals, got {s}"),
                });
            }
        }
        if self.targets.is_empty() && matches!(self.model, ModelShape::Scalar) {
            return Err(Error::Config {
                detail: "targets must not be empty for the scalar model".to_string(),
            });
        }
        match self.kind {
            ExperimentKind::MinibatchClock => {
                if self.n_samples < 32 {
                    return Err(Error::Config {
                        detail: format!(
                            "minibatch clock needs n_samples >= 32, got {}",
                            self.n_samples
                        ),
                    });
                }
                if self.mc_batches < 100 {
                    return Err(Error::InsufficientData {
                        detail: format!(
                            "mc_batches = {} is too few draws for a mean estimate; use >= 100",
                            self.mc_batches
                        ),
                    });
                }
                if self.batch_grid.is_empty() {
                    return Err(Error::Config {
                        detail: "batch_grid must not be empty".to_string(),
                    });
                }
            }
            ExperimentKind::LeakageOrder => {
                if self.eta_grid.len() < 4 {
                    return Err(Error::Config {
                        detail: "eta_grid needs at least 4 step sizes for an order fit".to_string(),
                    });
                }
            }
            ExperimentKind::DecayCheck => {
                if self.flow_h_grid.len() < 2 {
                    return Err(Error::Config {
                        detail: "flow_h_grid needs at least 2 step sizes".to_string(),
                    });
                }
            }
            ExperimentKind::NormLaw => {
                if self.norm_law_trials == 0 {
                    return Err(Error::Config {
                        detail: "norm_law_trials must be positive".to_string(),
                    });
                }
            }
            ExperimentKind::Figure7 if self.figure7_etas.is_empty() => {
                return Err(Error::Config {
                    detail: "figure7_etas must not be empty".to_string(),
                });
            }
            _ => {}
        }
        Ok(())
    }
}
