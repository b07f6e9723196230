//! Least-squares Monte Carlo toolkit for controlled backward SDEs.
//!
//! The state equation is `dy = b(t, y, z, v) dt + z dW` with terminal value
//! `y_T = xi`, and the cost is `J(v) = E[g(y_0) + int_0^T h dt]`. Controls take
//! values in a closed convex set and are optimized with a projected gradient
//! step on the Hamiltonian `H = p.b - h`, where `p` solves the forward adjoint
//! SDE `-dp = H_y dt + H_z dW`, `p_0 = g_y(y_0)`.
//!
//! Module map:
//! - [`model`]: problem definition, control sets, assumption probes, gradient checks.
//! - [`sampling`]: time grid and seeded Brownian ensembles.
//! - [`bsde`]: regression-based backward solver, variational and difference systems.
//! - [`adjoint`]: Hamiltonian and the forward adjoint simulation.
//! - [`smp`]: cost estimators, perturbations, stationarity and the optimizer.
//! - [`diagnostics`]: convergence tables, duality checks, empirical path norms.
//! - [`registry`]: named benchmark problems with their closed-form oracles.

pub mod adjoint;
pub mod array;
pub mod bsde;
pub mod diagnostics;
mod error;
pub mod model;
pub mod par;
pub mod registry;
pub mod sampling;
pub mod smp;
pub mod stats;

pub use error::{Error, Result};
