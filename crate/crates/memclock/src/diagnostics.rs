//! The measurement layer: forgetting clocks, the initialization-memory
//! spread, sensitivity curves, and leakage-order fits.
//!
//! Each optimizer ingredient erodes the conserved imbalance on its own
//! cumulative timescale, readable directly off the learning-rate schedule:
//!
//!   T_sgd   = (1/b) * sum_k eta_k^2     (minibatch-noise clock)
//!   T_l2    = lambda * sum_k eta_k      (weight-decay clock)
//!   T_adapt = sum_k eta_k               (adaptive/preconditioning clock)
//!
//! The rest of the module quantifies how much initialization memory a
//! finished run retains: the spread of a final metric across an
//! initialization-scale sweep (max minus min of per-sigma seed means), the
//! per-checkpoint OLS sensitivity |d metric / d sigma_w|, and log-log order
//! fits for one-step leakage magnitudes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::ols_fit;
use crate::optimizers::Schedule;

/// The three cumulative clocks of one (schedule, batch, lambda) recipe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClockReport {
    pub t_sgd: f64,
    pub t_l2: f64,
    pub t_adapt: f64,
}

/// Exact partial sums of the schedule over steps k < `k`, which may stop
/// short of the schedule's horizon. T_l2 is computed as lambda * T_adapt,
/// so that identity holds bitwise.
pub fn compute_clocks(schedule: &Schedule, b: usize, lambda: f64, k: u64) -> Result<ClockReport> {
    schedule.validate()?;
    if k > schedule.total_steps {
        return Err(Error::ScheduleOutOfRange {
            k,
            total: schedule.total_steps,
        });
    }
    if b == 0 {
        return Err(Error::InvalidParameter {
            name: "b",
            detail: "batch size must be positive".to_string(),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParameter {
            name: "lambda",
            detail: format!("must be a nonnegative finite real, got {lambda}"),
        });
    }
    let mut sum_eta = 0.0;
    let mut sum_eta_sq = 0.0;
    for step in 0..k {
        let eta = schedule.eta(step)?;
        sum_eta += eta;
        sum_eta_sq += eta * eta;
    }
    Ok(ClockReport {
        t_sgd: sum_eta_sq / b as f64,
        t_l2: lambda * sum_eta,
        t_adapt: sum_eta,
    })
}

/// Initialization-memory spread of one final metric across a sigma_w sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    /// Which final metric was aggregated (e.g. "final_loss", "d_fro").
    pub metric: String,
    /// Sweep values, ascending.
    pub sigma_values: Vec<f64>,
    /// Per-sigma means over seeds, aligned with `sigma_values`.
    pub means: Vec<f64>,
    /// max(means) - min(means): zero means the optimizer forgot where it
    /// started; large means initialization scale still shows at the end.
    pub spread: f64,
}

/// Aggregate per-seed final metrics into the memory spread. Input is
/// (sigma_w, per-seed values) in any order; the report is sorted by sigma
/// and each seed list is summed in sorted order, so the result is exactly
/// invariant to both key order and seed permutation.
pub fn memory_metric(metric: &str, per_sigma: &[(f64, Vec<f64>)]) -> Result<MemoryReport> {
    if per_sigma.is_empty() {
        return Err(Error::InsufficientData {
            detail: "memory metric needs at least one sigma_w".to_string(),
        });
    }
    let mut rows: Vec<(f64, Vec<f64>)> = per_sigma.to_vec();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Degenerate {
                detail: format!("duplicate sigma_w value {}", w[0].0),
            });
        }
    }
    let mut sigma_values = Vec::with_capacity(rows.len());
    let mut means = Vec::with_capacity(rows.len());
    for (sigma, seeds) in rows {
        if seeds.is_empty() {
            return Err(Error::InsufficientData {
                detail: format!("sigma_w = {sigma} has no seed values"),
            });
        }
        let mut sorted = seeds;
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        sigma_values.push(sigma);
        means.push(mean);
    }
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MemoryReport {
        metric: metric.to_string(),
        sigma_values,
        means,
        spread: max - min,
    })
}

/// Per-checkpoint sensitivity of a metric to the initialization scale.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityCurve {
    /// Clock value (or any monotone time axis) at each checkpoint.
    pub clock: Vec<f64>,
    /// |OLS slope of metric vs sigma_w| at each checkpoint.
    pub abs_beta: Vec<f64>,
}

/// OLS the metric against sigma_w separately at every checkpoint. Each
/// series must align with `clock`; at least two distinct sigma values are
/// needed or the regression is degenerate.
pub fn sensitivity_curve(
    clock: &[f64],
    per_sigma_series: &[(f64, Vec<f64>)],
) -> Result<SensitivityCurve> {
    if per_sigma_series.len() < 2 {
        return Err(Error::InsufficientData {
            detail: format!(
                "sensitivity needs at least 2 sigma_w values, got {}",
                per_sigma_series.len()
            ),
        });
    }
    let sigmas: Vec<f64> = per_sigma_series.iter().map(|(s, _)| *s).collect();
    for (sigma, series) in per_sigma_series {
        if series.len() != clock.len() {
            return Err(Error::Shape {
                context: "sensitivity_curve",
                detail: format!(
                    "sigma_w = {sigma} has {} checkpoints, clock has {}",
                    series.len(),
                    clock.len()
                ),
            });
        }
    }
    let mut abs_beta = Vec::with_capacity(clock.len());
    for t in 0..clock.len() {
        let ys: Vec<f64> = per_sigma_series.iter().map(|(_, s)| s[t]).collect();
        abs_beta.push(ols_fit(&sigmas, &ys)?.abs_slope);
    }
    Ok(SensitivityCurve {
        clock: clock.to_vec(),
        abs_beta,
    })
}

/// Log-log order fit: slope of ln|delta| against ln(eta).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    /// Two standard errors of the slope, from the regression residuals;
    /// zero when the data is an exact power law.
    pub half_width: f64,
}

pub fn order_fit(etas: &[f64], deltas: &[f64]) -> Result<OrderFit> {
    if etas.len() != deltas.len() {
        return Err(Error::Shape {
            context: "order_fit",
            detail: format!("{} etas vs {} deltas", etas.len(), deltas.len()),
        });
    }
    if etas.len() < 4 {
        return Err(Error::InsufficientData {
            detail: format!("order fit needs at least 4 points, got {}", etas.len()),
        });
    }
    for (&eta, &delta) in etas.iter().zip(deltas) {
        if !eta.is_finite() || eta <= 0.0 || !delta.is_finite() || delta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "order_fit inputs",
                detail: format!("needs positive values, got eta = {eta}, delta = {delta}"),
            });
        }
    }
    let xs: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let fit = ols_fit(&xs, &ys)?;
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (fit.intercept + fit.slope * x);
            r * r
        })
        .sum();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(OrderFit {
        slope: fit.slope,
        half_width: 2.0 * se,
    })
}
