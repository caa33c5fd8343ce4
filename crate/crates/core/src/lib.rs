//! Spectral lab for two-dimensional Boussinesq perturbations of plane
//! Couette flow in the channel `T x (-1, 1)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: Chebyshev collocation, quadrature, Helmholtz solves.
//! * [`operators`]: per-mode linearized operators, velocity recovery and the
//!   no-slip compatibility projection.
//! * [`stepper`]: Crank-Nicolson propagators, including the influence-matrix
//!   closure for the vorticity.
//! * [`resolvent`]: resolvent solves, norm ratios and the resolvent gap.
//! * [`semigroup`]: linear evolution, decay-rate fits, space-time norms and
//!   forced-estimate verification.
//! * [`nonlinear`]: the full pseudo-spectral simulation.
//! * [`ledger`]: the space-time energy functionals and their audit.
//! * [`harness`]: configuration, threshold scans and exponent fits.
//! * [`io`]: versioned CSV and binary snapshot formats.

pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod ledger;
pub mod nonlinear;
pub mod operators;
pub mod resolvent;
pub mod semigroup;
pub mod stepper;

pub use error::{LabError, Result};
pub use grid::{ChebGrid, ModeField};
