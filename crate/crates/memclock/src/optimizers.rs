//! The optimizer family and the reference flow integrator.
//!
//! Every discrete update here has the shape W_j <- decay * W_j - eta * Q_j,
//! applied to all factors simultaneously from gradients evaluated at the
//! pre-step state. Plain gradient descent uses Q_j = H_j (the chain-rule
//! layer gradient of one shared G) and decay = 1; weight decay contracts
//! with decay = 1 - eta*lambda; momentum, per-layer preconditioning, and
//! Adam substitute their own Q_j. Keeping each step in this normal form is
//! what lets the conservation module audit it exactly.
//!
//! Steps are functional: they return the next state and never mutate their
//! inputs on an error path (momentum and Adam buffers commit only after the
//! step succeeds). A trajectory is sequential by nature; concurrency lives
//! a level up, across independent runs.

use serde::{Deserialize, Serialize};

use crate::conservation::{imbalance, ImbalanceRecord};
use crate::error::{Error, Result};
use crate::models::{loss_and_product_grad, Batch, ModelState, QuadraticTask, Sampling};
use crate::numerics::Matrix;

/// Any factor norm beyond this aborts the run as divergent.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

/// Learning-rate schedule over a fixed horizon of `total_steps` steps.
///
/// The cosine schedule is
/// eta_k = eta0 * (alpha + (1 - alpha) * (1 + cos(pi*k/K)) / 2),
/// monotone nonincreasing from eta0 at k = 0 to alpha*eta0 at k = K.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub eta0: f64,
    /// Cosine floor fraction alpha in [0, 1]; ignored for constant.
    #[serde(default)]
    pub floor_alpha: f64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn constant(eta0: f64, total_steps: u64) -> Schedule {
        Schedule {
            kind: ScheduleKind::Constant,
            eta0,
            floor_alpha: 0.0,
            total_steps,
        }
    }

    pub fn cosine(eta0: f64, total_steps: u64, floor_alpha: f64) -> Schedule {
        Schedule {
            kind: ScheduleKind::Cosine,
            eta0,
            floor_alpha,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta0.is_finite() || self.eta0 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eta0",
                detail: format!("must be a positive finite real, got {}", self.eta0),
            });
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "total_steps",
                detail: "schedule needs at least one step".to_string(),
            });
        }
        if !(0.0..=1.0).contains(&self.floor_alpha) {
            return Err(Error::InvalidParameter {
                name: "floor_alpha",
                detail: format!("must lie in [0, 1], got {}", self.floor_alpha),
            });
        }
        Ok(())
    }

    /// eta_k for 0 <= k <= total_steps (the endpoint is the cosine floor).
    pub fn eta(&self, k: u64) -> Result<f64> {
        if k > self.total_steps {
            return Err(Error::ScheduleOutOfRange {
                k,
                total: self.total_steps,
            });
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.eta0,
            ScheduleKind::Cosine => {
                let frac = k as f64 / self.total_steps as f64;
                let window = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
                self.eta0 * (self.floor_alpha + (1.0 - self.floor_alpha) * window)
            }
        })
    }

    /// The learning rates actually applied over a full run: k = 0..K-1.
    pub fn etas(&self) -> Vec<f64> {
        (0..self.total_steps)
            .map(|k| self.eta(k).expect("k < total_steps"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Sgd,
    MomentumSgd,
    GdWeightDecay,
    PrecondGd,
    Adam,
}

/// Full optimizer configuration. Fields not used by the chosen algorithm
/// are ignored (and defaulted), so configs stay flat and serde-friendly.
/// Adam with lambda > 0 is decoupled weight decay: the contraction is
/// applied multiplicatively before the gradient step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSpec {
    pub algorithm: Algorithm,
    pub schedule: Schedule,
    /// Batch size; None means full batch.
    pub batch: Option<usize>,
    pub lambda: f64,
    pub mu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-factor positive scales in declaration order (scalar family:
    /// [alpha, beta] for a and b). Required for precond_gd.
    pub preconditioner: Option<Vec<f64>>,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            algorithm: Algorithm::Gd,
            schedule: Schedule::constant(1e-3, 1000),
            batch: None,
            lambda: 0.0,
            mu: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            preconditioner: None,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if let Some(b) = self.batch {
            if b == 0 {
                return Err(Error::InvalidParameter {
                    name: "batch",
                    detail: "batch size must be positive".to_string(),
                });
            }
            if self.algorithm == Algorithm::Gd {
                return Err(Error::Config {
                    detail: "algorithm `gd` is full-batch; use `sgd` for minibatches".to_string(),
                });
            }
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParameter {
                name: "lambda",
                detail: format!("must be a nonnegative finite real, got {}", self.lambda),
            });
        }
        // Both schedule kinds peak at eta0, so checking the contraction
        // there covers every step.
        if self.lambda * self.eta_max() >= 1.0 {
            return Err(Error::ContractionViolated {
                step: 0,
                eta_lambda: self.lambda * self.eta_max(),
            });
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::InvalidParameter {
                name: "mu",
                detail: format!("momentum must lie in [0, 1), got {}", self.mu),
            });
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidParameter {
                    name,
                    detail: format!("must lie in [0, 1), got {beta}"),
                });
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                detail: format!("must be a positive finite real, got {}", self.epsilon),
            });
        }
        match (&self.algorithm, &self.preconditioner) {
            (Algorithm::PrecondGd, None) => {
                return Err(Error::InvalidParameter {
                    name: "preconditioner",
                    detail: "precond_gd needs per-factor scales".to_string(),
                });
            }
            (_, Some(scales)) if scales.iter().any(|s| !s.is_finite() || *s <= 0.0) => {
                return Err(Error::InvalidParameter {
                    name: "preconditioner",
                    detail: format!("scales must be positive finite reals, got {scales:?}"),
                });
            }
            _ => {}
        }
        Ok(())
    }

    fn eta_max(&self) -> f64 {
        self.eta0()
    }

    fn eta0(&self) -> f64 {
        self.schedule.eta0
    }
}

/// What a step did, in chain order: W_j <- decay * W_j - eta * Q_j.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub decay: f64,
    pub updates: Vec<Matrix>,
}

/// One executed step with its audit trail. `updates` are the chain-order
/// Q_j, exactly as consumed by the conservation residuals.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub k: u64,
    pub eta: f64,
    /// Loss at the pre-step state on the selected batch.
    pub loss: f64,
    pub batch: Batch,
    pub decay: f64,
    pub updates: Vec<Matrix>,
}

/// Heavy-ball velocity buffers, one per factor in chain order.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity {
    buffers: Vec<Matrix>,
}

impl Velocity {
    pub fn zeros_like(state: &ModelState) -> Velocity {
        Velocity {
            buffers: state
                .stack()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub fn buffers(&self) -> &[Matrix] {
        &self.buffers
    }
}

/// Adam first/second moment buffers and the 1-based step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamMoments {
    pub fn zeros_like(state: &ModelState) -> AdamMoments {
        let zeros: Vec<Matrix> = state
            .stack()
            .iter()
            .map(|w| Matrix::zeros(w.rows(), w.cols()))
            .collect();
        AdamMoments {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Mutable optimizer memory, matched to the algorithm by `for_algorithm`.
#[derive(Clone, Debug)]
pub enum OptimizerState {
    Stateless,
    Velocity(Velocity),
    Moments(AdamMoments),
}

impl OptimizerState {
    pub fn for_algorithm(algorithm: Algorithm, state: &ModelState) -> OptimizerState {
        match algorithm {
            Algorithm::MomentumSgd => OptimizerState::Velocity(Velocity::zeros_like(state)),
            Algorithm::Adam => OptimizerState::Moments(AdamMoments::zeros_like(state)),
            _ => OptimizerState::Stateless,
        }
    }
}

fn check_gradient(g: &Matrix, k: u64) -> Result<()> {
    if !g.all_finite() {
        return Err(Error::NonFiniteGradient { step: k });
    }
    Ok(())
}

/// Apply W_j <- decay * W_j - eta * Q_j to every factor, with divergence
/// detection. Branching on decay == 1 keeps the no-decay path bitwise
/// identical to plain gradient descent.
fn apply(
    state: &ModelState,
    decay: f64,
    updates: Vec<Matrix>,
    eta: f64,
    k: u64,
) -> Result<(ModelState, StepInfo)> {
    let stack = state.stack();
    let next_stack: Vec<Matrix> = stack
        .iter()
        .zip(&updates)
        .map(|(w, q)| {
            if decay == 1.0 {
                w.add_scaled(q, -eta)
            } else {
                w.scale(decay).add_scaled(q, -eta)
            }
        })
        .collect();
    let next = state.with_stack(next_stack);
    let norm = next.norm_total();
    if !next.all_finite() || norm > BLOW_UP_THRESHOLD {
        return Err(Error::BlowUp {
            context: format!("optimizer step {k}"),
            norm,
            threshold: BLOW_UP_THRESHOLD,
        });
    }
    Ok((next, StepInfo { decay, updates }))
}

/// Plain (stochastic) gradient descent: Q_j = H_j, no contraction.
pub fn step_gd(state: &ModelState, g: &Matrix, eta: f64, k: u64) -> Result<(ModelState, StepInfo)> {
    check_gradient(g, k)?;
    let q = state.stack_grads(g)?;
    apply(state, 1.0, q, eta, k)
}

/// Gradient descent with coupled decay: W_j <- (1 - eta*lambda) W_j - eta H_j.
pub fn step_weight_decay(
    state: &ModelState,
    g: &Matrix,
    eta: f64,
    lambda: f64,
    k: u64,
) -> Result<(ModelState, StepInfo)> {
    check_gradient(g, k)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            detail: format!("must be a nonnegative finite real, got {lambda}"),
        });
    }
    if eta * lambda >= 1.0 {
        return Err(Error::ContractionViolated {
            step: k,
            eta_lambda: eta * lambda,
        });
    }
    let decay = if lambda == 0.0 {
        1.0
    } else {
        1.0 - eta * lambda
    };
    let q = state.stack_grads(g)?;
    apply(state, decay, q, eta, k)
}

/// Heavy ball: v <- mu*v + H; W <- W - eta*v. The velocity accumulates raw
/// gradients and eta multiplies the whole velocity (not folded in), so the
/// recorded updates are the buffers themselves. Buffers commit only if the
/// step succeeds.
pub fn step_momentum(
    state: &ModelState,
    g: &Matrix,
    eta: f64,
    mu: f64,
    velocity: &mut Velocity,
    k: u64,
) -> Result<(ModelState, StepInfo)> {
    check_gradient(g, k)?;
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::InvalidParameter {
            name: "mu",
            detail: format!("momentum must lie in [0, 1), got {mu}"),
        });
    }
    let h = state.stack_grads(g)?;
    if velocity.buffers.len() != h.len() {
        return Err(Error::Shape {
            context: "step_momentum",
            detail: format!(
                "{} velocity buffers for {} factors",
                velocity.buffers.len(),
                h.len()
            ),
        });
    }
    let new_buffers: Vec<Matrix> = velocity
        .buffers
        .iter()
        .zip(&h)
        .map(|(v, hj)| v.scale(mu).add(hj))
        .collect();
    let (next, info) = apply(state, 1.0, new_buffers.clone(), eta, k)?;
    velocity.buffers = new_buffers;
    Ok((next, info))
}

/// Per-factor scalar preconditioning: Q_j = scale_j * H_j. Scales arrive in
/// declaration order (scalar: [alpha, beta]; two-factor: [for U, for V];
/// deep: W_1..W_L) and are remapped to chain order internally.
pub fn step_precond(
    state: &ModelState,
    g: &Matrix,
    eta: f64,
    scales: &[f64],
    k: u64,
) -> Result<(ModelState, StepInfo)> {
    check_gradient(g, k)?;
    let chain_scales = chain_order_scales(state, scales)?;
    let h = state.stack_grads(g)?;
    let q: Vec<Matrix> = h
        .iter()
        .zip(&chain_scales)
        .map(|(hj, s)| if *s == 1.0 { hj.clone() } else { hj.scale(*s) })
        .collect();
    apply(state, 1.0, q, eta, k)
}

fn chain_order_scales(state: &ModelState, scales: &[f64]) -> Result<Vec<f64>> {
    let want = state.stack().len();
    if scales.len() != want {
        return Err(Error::InvalidParameter {
            name: "preconditioner",
            detail: format!("{} scales for {} factors", scales.len(), want),
        });
    }
    for s in scales {
        if !s.is_finite() || *s <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "preconditioner",
                detail: format!("scales must be positive finite reals, got {scales:?}"),
            });
        }
    }
    Ok(match state {
        // Declaration order (a, b) / (U, V) is the reverse of chain order.
        ModelState::Scalar(_) | ModelState::TwoFactor(_) => scales.iter().rev().copied().collect(),
        ModelState::Deep(_) => scales.to_vec(),
    })
}

/// Adam with bias correction, optionally with decoupled decay (lambda > 0):
///
///   m <- beta1*m + (1-beta1)*H        v <- beta2*v + (1-beta2)*H.*H
///   m_hat = m / (1 - beta1^t)         v_hat = v / (1 - beta2^t)
///   W <- (1 - eta*lambda) * W - eta * m_hat ./ (sqrt(v_hat) + epsilon)
///
/// t is the 1-based count of steps taken with these moments; epsilon sits
/// outside the square root. Moments commit only if the step succeeds.
pub fn step_adam(
    state: &ModelState,
    g: &Matrix,
    eta: f64,
    params: &AdamParams,
    lambda: f64,
    moments: &mut AdamMoments,
    k: u64,
) -> Result<(ModelState, StepInfo)> {
    check_gradient(g, k)?;
    for (name, beta) in [("beta1", params.beta1), ("beta2", params.beta2)] {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidParameter {
                name,
                detail: format!("must lie in [0, 1), got {beta}"),
            });
        }
    }
    if !params.epsilon.is_finite() || params.epsilon <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            detail: format!("must be a positive finite real, got {}", params.epsilon),
        });
    }
    if eta * lambda >= 1.0 {
        return Err(Error::ContractionViolated {
            step: k,
            eta_lambda: eta * lambda,
        });
    }
    let h = state.stack_grads(g)?;
    if moments.m.len() != h.len() {
        return Err(Error::Shape {
            context: "step_adam",
            detail: format!("{} moment buffers for {} factors", moments.m.len(), h.len()),
        });
    }
    let t = moments.t + 1;
    // beta^t vanishes long before t overflows i32; clamp for safety.
    let exponent = t.min(1 << 30) as i32;
    let bc1 = 1.0 - params.beta1.powi(exponent);
    let bc2 = 1.0 - params.beta2.powi(exponent);
    let new_m: Vec<Matrix> = moments
        .m
        .iter()
        .zip(&h)
        .map(|(m, hj)| m.scale(params.beta1).add_scaled(hj, 1.0 - params.beta1))
        .collect();
    let new_v: Vec<Matrix> = moments
        .v
        .iter()
        .zip(&h)
        .map(|(v, hj)| {
            v.zip_with(hj, |vv, hh| {
                params.beta2 * vv + (1.0 - params.beta2) * hh * hh
            })
        })
        .collect();
    let q: Vec<Matrix> = new_m
        .iter()
        .zip(&new_v)
        .map(|(m, v)| {
            m.zip_with(v, |mm, vv| {
                (mm / bc1) / ((vv / bc2).sqrt() + params.epsilon)
            })
        })
        .collect();
    let decay = if lambda == 0.0 {
        1.0
    } else {
        1.0 - eta * lambda
    };
    let (next, info) = apply(state, decay, q, eta, k)?;
    moments.m = new_m;
    moments.v = new_v;
    moments.t = t;
    Ok((next, info))
}

/// Draw a batch, evaluate (loss, G) at the current state, and take one step
/// of the configured algorithm. Returns the next state and the full audit
/// record. The task's sampler advances even if the step then fails; model
/// and optimizer state never change on error.
pub fn advance(
    state: &ModelState,
    task: &mut QuadraticTask,
    spec: &OptimizerSpec,
    opt_state: &mut OptimizerState,
    k: u64,
) -> Result<(ModelState, StepRecord)> {
    let eta = spec.schedule.eta(k)?;
    let batch = task.next_batch();
    let (loss, g) = loss_and_product_grad(state, task, &batch)?;
    let (next, info) = match spec.algorithm {
        Algorithm::Gd | Algorithm::Sgd => step_gd(state, &g, eta, k),
        Algorithm::GdWeightDecay => step_weight_decay(state, &g, eta, spec.lambda, k),
        Algorithm::MomentumSgd => match opt_state {
            OptimizerState::Velocity(v) => step_momentum(state, &g, eta, spec.mu, v, k),
            _ => Err(Error::Config {
                detail: "momentum_sgd needs a velocity buffer".to_string(),
            }),
        },
        Algorithm::PrecondGd => {
            let scales = spec
                .preconditioner
                .as_ref()
                .ok_or(Error::InvalidParameter {
                    name: "preconditioner",
                    detail: "precond_gd needs per-factor scales".to_string(),
                })?;
            step_precond(state, &g, eta, scales, k)
        }
        Algorithm::Adam => match opt_state {
            OptimizerState::Moments(m) => {
                let params = AdamParams {
                    beta1: spec.beta1,
                    beta2: spec.beta2,
                    epsilon: spec.epsilon,
                };
                step_adam(state, &g, eta, &params, spec.lambda, m, k)
            }
            _ => Err(Error::Config {
                detail: "adam needs moment buffers".to_string(),
            }),
        },
    }?;
    Ok((
        next,
        StepRecord {
            k,
            eta,
            loss,
            batch,
            decay: info.decay,
            updates: info.updates,
        },
    ))
}

/// Imbalance history of an integrated gradient flow.
#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub imbalances: Vec<ImbalanceRecord>,
    pub final_state: ModelState,
}

/// Classical fourth-order Runge-Kutta integration of the (decayed) gradient
/// flow W-dot_j = -(H_j + lambda*W_j), full batch, with n = round(t_end/h)
/// uniform steps of size h. The recorded final time is n*h, which can
/// differ from t_end by up to h/2; callers choose exact multiples.
pub fn flow_integrate(
    state: &ModelState,
    task: &QuadraticTask,
    lambda: f64,
    t_end: f64,
    h: f64,
) -> Result<FlowTrajectory> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "h",
            detail: format!("step size must be a positive finite real, got {h}"),
        });
    }
    if !t_end.is_finite() || t_end < 0.0 {
        return Err(Error::InvalidParameter {
            name: "t_end",
            detail: format!("horizon must be a nonnegative finite real, got {t_end}"),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            detail: format!("must be a nonnegative finite real, got {lambda}"),
        });
    }
    if !matches!(task.sampling(), Sampling::FullBatch) {
        return Err(Error::InvalidParameter {
            name: "sampling",
            detail: "gradient flow integrates the full-batch field".to_string(),
        });
    }
    task.check_model(state)?;

    let deriv = |stack: &[Matrix]| -> Result<Vec<Matrix>> {
        let at = state.with_stack(stack.to_vec());
        let (_, g) = loss_and_product_grad(&at, task, &Batch::Full)?;
        let hs = at.stack_grads(&g)?;
        Ok(hs
            .iter()
            .zip(stack)
            .map(|(hj, wj)| hj.add_scaled(wj, lambda).scale(-1.0))
            .collect())
    };
    let axpy = |base: &[Matrix], dir: &[Matrix], s: f64| -> Vec<Matrix> {
        base.iter()
            .zip(dir)
            .map(|(b, d)| b.add_scaled(d, s))
            .collect()
    };

    let n = (t_end / h).round() as u64;
    let mut stack = state.stack();
    let mut times = vec![0.0];
    let mut imbalances = vec![imbalance(state)];
    for i in 0..n {
        let k1 = deriv(&stack)?;
        let k2 = deriv(&axpy(&stack, &k1, 0.5 * h))?;
        let k3 = deriv(&axpy(&stack, &k2, 0.5 * h))?;
        let k4 = deriv(&axpy(&stack, &k3, h))?;
        stack = stack
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let sum = k1[j]
                    .add_scaled(&k2[j], 2.0)
                    .add_scaled(&k3[j], 2.0)
                    .add(&k4[j]);
                w.add_scaled(&sum, h / 6.0)
            })
            .collect();
        let t = (i + 1) as f64 * h;
        let at = state.with_stack(stack.clone());
        let norm = at.norm_total();
        if !at.all_finite() || norm > BLOW_UP_THRESHOLD {
            return Err(Error::BlowUp {
                context: format!("gradient flow at t = {t:.6}"),
                norm,
                threshold: BLOW_UP_THRESHOLD,
            });
        }
        times.push(t);
        imbalances.push(imbalance(&at));
    }
    Ok(FlowTrajectory {
        times,
        imbalances,
        final_state: state.with_stack(stack),
    })
}
