//! Identifiability of sparse linear ODE systems `x' = A x` from a single
//! trajectory.
//!
//! The crate is organised along the analysis pipeline:
//!
//! - [`ensemble`] draws random sparse system matrices and unit-sphere initial
//!   conditions, addressable by `(seed, draw_index)`.
//! - [`spectral`] runs the system-level tests: numeric rank, eigenvalue
//!   rank-drop criterion, second-smallest singular value, matching-based
//!   structural rank bounds and the closed-form probability bounds.
//! - [`integrator`] solves the IVP with an adaptive Dormand–Prince 5(4) scheme
//!   and with a scaling-and-squaring matrix exponential oracle.
//! - [`traj_metrics`] computes trajectory-level metrics (distance to the
//!   kernel, smoothed condition number) and the divergence bound for
//!   confusable systems.
//! - [`estimators`] fits `Â` back from data with sequentially thresholded
//!   least squares and with an L1-regularised trajectory-matching model.
//! - [`harness`] runs seeded Monte Carlo sweeps over `(n, p)` grids and writes
//!   aggregate tables.

pub mod eigen;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod integrator;
pub mod linalg;
pub mod matching;
pub mod rng;
mod serde_float;
pub mod special;
pub mod spectral;
pub mod stats;
pub mod traj_metrics;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
