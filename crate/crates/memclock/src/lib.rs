//! memclock: a laboratory for measuring how optimizers remember and forget.
//!
//! Small linear-network models (a scalar product a*b, a two-factor matrix
//! product U*V, and deep chains W_L...W_1) trained on quadratic losses carry
//! a conserved quantity: the layer imbalance D. Plain gradient descent
//! preserves D to machine precision; weight decay, adaptive preconditioning,
//! and minibatch noise each erode it at a characteristic rate. That erosion
//! acts as a clock, and the crate measures it three ways:
//!
//! - exact per-step identities for how D moves under each optimizer family,
//!   checked to machine precision (`conservation`);
//! - closed-form "forgetting clocks" that predict the erosion from the
//!   learning-rate schedule alone (`diagnostics`);
//! - reproducible experiments (a four-panel toy landscape, clock tables,
//!   schedule sweeps, leakage-order studies) with CSV/JSON output
//!   (`harness`).
//!
//! Everything is deterministic: a counter-based RNG, fixed seeds, f64
//! throughout, and byte-identical CSV re-runs.

pub mod conservation;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod optimizers;

pub use error::{Error, Result};
