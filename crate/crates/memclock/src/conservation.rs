//! The conserved quantity and its exact per-step bookkeeping.
//!
//! Every adjacent pair of factors in a linear chain carries an imbalance
//! matrix D_j = W_j W_jᵀ - W_{j+1}ᵀ W_{j+1}. Under plain gradient descent
//! the first-order change in D_j cancels exactly — the same product-space
//! gradient G induces every layer gradient, and the chain-rule identities
//! H_j W_jᵀ = W_{j+1}ᵀ H_{j+1} (and its transpose) wipe out the O(eta)
//! term. What remains is an exact discrete identity,
//!
//!   D_{j,k+1} = (1 - eta*lambda)^2 D_{j,k}
//!             + eta^2 (H_j H_jᵀ - H_{j+1}ᵀ H_{j+1}),
//!
//! valid to machine precision for the scalar, two-factor, and deep
//! families alike. For an arbitrary update W_j <- W_j - eta*Q_j (momentum
//! buffers, adaptive preconditioning, anything) the bookkeeping still
//! closes, but the first-order term survives:
//!
//!   Delta D_j = -eta (Q_j W_jᵀ + W_j Q_jᵀ - Q_{j+1}ᵀ W_{j+1} - W_{j+1}ᵀ Q_{j+1})
//!             + eta^2 (Q_j Q_jᵀ - Q_{j+1}ᵀ Q_{j+1}).
//!
//! That surviving term is the leakage this crate measures. The residual
//! functions here evaluate both identities against actually-executed steps;
//! anything above a machine-precision tolerance means the optimizer update
//! and the bookkeeping disagree.
//!
//! Conventions: the scalar family reports D = a^2 - b^2 and the two-factor
//! family D = UᵀU - V Vᵀ. Both are the *negative* of the chain-order
//! convention (their chains are [b, a] and [V, U]), so the record flips the
//! sign for those families; residual norms are unaffected by the flip.

use crate::error::{Error, Result};
use crate::models::ModelState;
use crate::numerics::Matrix;

/// Imbalance matrices D_1..D_{L-1} for one model state, in the family's
/// own sign convention.
#[derive(Clone, Debug, PartialEq)]
pub struct ImbalanceRecord {
    pairs: Vec<Matrix>,
}

impl ImbalanceRecord {
    /// Assembles a record from raw per-pair matrices. Used by the harness to
    /// build derived records (differences, Monte-Carlo means) that are not
    /// the imbalance of any single state.
    pub(crate) fn from_pairs(pairs: Vec<Matrix>) -> ImbalanceRecord {
        ImbalanceRecord { pairs }
    }

    pub fn pairs(&self) -> &[Matrix] {
        &self.pairs
    }

    /// Signed scalar imbalance, when the record is a single 1x1 pair.
    pub fn scalar(&self) -> Option<f64> {
        match self.pairs.as_slice() {
            [d] if d.shape() == (1, 1) => Some(d.get(0, 0)),
            _ => None,
        }
    }

    pub fn fro_norms(&self) -> Vec<f64> {
        self.pairs.iter().map(Matrix::frobenius_norm).collect()
    }

    pub fn max_fro(&self) -> f64 {
        self.fro_norms().into_iter().fold(0.0, f64::max)
    }

    /// Root of the summed squared Frobenius norms — the `d_fro` column in
    /// trajectory CSVs. Equal to |D| for the scalar family.
    pub fn total_fro(&self) -> f64 {
        self.fro_norms().iter().map(|n| n * n).sum::<f64>().sqrt()
    }

    /// Frobenius distance between two records of matching shape.
    pub fn distance(&self, other: &ImbalanceRecord) -> Result<f64> {
        if self.pairs.len() != other.pairs.len() {
            return Err(Error::Shape {
                context: "ImbalanceRecord::distance",
                detail: format!(
                    "records have {} vs {} pairs",
                    self.pairs.len(),
                    other.pairs.len()
                ),
            });
        }
        let mut acc = 0.0;
        for (a, b) in self.pairs.iter().zip(&other.pairs) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    context: "ImbalanceRecord::distance",
                    detail: format!("pair shapes {:?} vs {:?}", a.shape(), b.shape()),
                });
            }
            let d = a.sub(b).frobenius_norm();
            acc += d * d;
        }
        Ok(acc.sqrt())
    }

    /// Record with every pair scaled by the same factor (decay predictions).
    pub fn scaled(&self, factor: f64) -> ImbalanceRecord {
        ImbalanceRecord {
            pairs: self.pairs.iter().map(|d| d.scale(factor)).collect(),
        }
    }
}

/// Chain-order imbalances D_j = W_j W_jᵀ - W_{j+1}ᵀ W_{j+1}.
fn stack_imbalance(stack: &[Matrix]) -> Vec<Matrix> {
    (0..stack.len() - 1)
        .map(|j| {
            let left = stack[j].matmul(&stack[j].transpose()).expect("square gram");
            let right = stack[j + 1]
                .transpose()
                .matmul(&stack[j + 1])
                .expect("square gram");
            left.sub(&right)
        })
        .collect()
}

/// Imbalance record for a model state, in the family's sign convention.
pub fn imbalance(state: &ModelState) -> ImbalanceRecord {
    let stack = state.stack();
    let mut pairs = stack_imbalance(&stack);
    if matches!(state, ModelState::Scalar(_) | ModelState::TwoFactor(_)) {
        for d in &mut pairs {
            *d = d.scale(-1.0);
        }
    }
    ImbalanceRecord { pairs }
}

fn check_family(before: &ModelState, after: &ModelState, context: &'static str) -> Result<()> {
    if before.shape() != after.shape() {
        return Err(Error::Shape {
            context,
            detail: format!(
                "states have different shapes: {:?} vs {:?}",
                before.shape(),
                after.shape()
            ),
        });
    }
    Ok(())
}

/// Residual of the shared-gradient step identity
/// D_{k+1} = (1 - eta*lambda)^2 D_k + eta^2 (H_j H_jᵀ - H_{j+1}ᵀ H_{j+1}),
/// where H_j are the chain-rule layer gradients induced by `g` at `before`.
/// Returns the max Frobenius norm over adjacent pairs. Machine precision
/// (up to a sqrt(1 + ||D||_F) style scale) certifies that the executed step
/// was a plain gradient / weight-decay step sharing one G.
pub fn leakage_residual(
    before: &ModelState,
    after: &ModelState,
    g: &Matrix,
    eta: f64,
    lambda: f64,
) -> Result<f64> {
    check_family(before, after, "leakage_residual")?;
    let stack = before.stack();
    let h = before.stack_grads(g)?;
    let d_before = stack_imbalance(&stack);
    let d_after = stack_imbalance(&after.stack());
    let c2 = (1.0 - eta * lambda) * (1.0 - eta * lambda);
    let mut worst: f64 = 0.0;
    for j in 0..d_before.len() {
        let source = h[j]
            .matmul(&h[j].transpose())?
            .sub(&h[j + 1].transpose().matmul(&h[j + 1])?);
        let predicted = d_before[j].scale(c2).add_scaled(&source, eta * eta);
        worst = worst.max(d_after[j].sub(&predicted).frobenius_norm());
    }
    Ok(worst)
}

/// Residual of the general-update identity for steps W_j <- W_j - eta*Q_j,
/// with `updates` the chain-order Q_1..Q_L actually applied. This closes
/// exactly for *any* update directions — momentum buffers, preconditioned
/// gradients — so a large residual can only mean the recorded updates are
/// not the ones that were executed.
pub fn precond_leakage_residual(
    before: &ModelState,
    after: &ModelState,
    updates: &[Matrix],
    eta: f64,
) -> Result<f64> {
    check_family(before, after, "precond_leakage_residual")?;
    let stack = before.stack();
    if updates.len() != stack.len() {
        return Err(Error::Shape {
            context: "precond_leakage_residual",
            detail: format!("{} updates for {} factors", updates.len(), stack.len()),
        });
    }
    let d_before = stack_imbalance(&stack);
    let d_after = stack_imbalance(&after.stack());
    let mut worst: f64 = 0.0;
    for j in 0..d_before.len() {
        let (w, q) = (&stack[j], &updates[j]);
        let (w2, q2) = (&stack[j + 1], &updates[j + 1]);
        let first = q
            .matmul(&w.transpose())?
            .add(&w.matmul(&q.transpose())?)
            .sub(&q2.transpose().matmul(w2)?)
            .sub(&w2.transpose().matmul(q2)?);
        let second = q.matmul(&q.transpose())?.sub(&q2.transpose().matmul(q2)?);
        let predicted = d_before[j]
            .add_scaled(&first, -eta)
            .add_scaled(&second, eta * eta);
        worst = worst.max(d_after[j].sub(&predicted).frobenius_norm());
    }
    Ok(worst)
}

/// Predicted squared norm at a scalar global minimum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormPrediction {
    /// a^2 + b^2 at any minimizer with product p_star and imbalance d0.
    pub predicted_sq_norm: f64,
    pub p_star: f64,
}

/// The imbalance pins the limiting norm: at any point with a*b = p_star and
/// a^2 - b^2 = d0, the identity (a^2 + b^2)^2 = d0^2 + 4 p_star^2 forces
/// a^2 + b^2 = sqrt(d0^2 + 4 p_star^2). For p_star = 0 this degrades to
/// |d0| (one factor dies, the other keeps the whole imbalance).
pub fn scalar_norm_prediction(d0: f64, p_star: f64) -> NormPrediction {
    NormPrediction {
        predicted_sq_norm: (d0 * d0 + 4.0 * p_star * p_star).sqrt(),
        p_star,
    }
}

/// Continuous-time decay factor for the imbalance under L2-regularized
/// gradient flow: D(t) = exp(-2*lambda*t) D(0).
pub fn flow_decay_factor(lambda: f64, t: f64) -> f64 {
    (-2.0 * lambda * t).exp()
}

/// Discrete decay factor over a schedule: prod_k (1 - eta_k*lambda)^2.
/// With the gradient forced to zero this is exact, not approximate.
pub fn discrete_decay_factor(lambda: f64, etas: &[f64]) -> f64 {
    etas.iter()
        .map(|eta| {
            let c = 1.0 - eta * lambda;
            c * c
        })
        .product()
}
