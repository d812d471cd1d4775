//! Numerical toolkit for degenerate Kolmogorov–Fokker–Planck operators
//!
//! ```text
//! L u = div(A D u) + <B x, D u> - ∂_t u + <b, D u> - div(a u) + c u
//! ```
//!
//! The crate covers structure classification of the drift matrix `B`, the
//! homogeneous Lie group attached to the principal part, the explicit
//! Gaussian fundamental solution and its potentials, finite-difference and
//! kernel-based solution families, and empirical verification of the
//! Sobolev, Caccioppoli and Moser-type local estimates on those families.
//!
//! Module map:
//!
//! * [`operator`] – operator description, Kalman rank, block structure, exponents.
//! * [`lie`] – group law, dilations, homogeneous norms, cylinders.
//! * [`kernel`] – covariance `C(t)`, `Γ`, `Γ₀`, potentials.
//! * [`grid`] and [`solver`] – grid functions, solution families, discrete operators.
//! * [`estimates`] – norms over cylinders and the inequality checks.
//! * [`config`], [`report`], [`experiment`] – experiment configuration and reporting.

pub mod config;
pub mod error;
pub mod estimates;
pub mod experiment;
pub mod expr;
pub mod grid;
pub mod kernel;
pub mod lie;
pub mod linalg;
pub mod operator;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{GridFunction, GridSpec};
pub use kernel::KernelEvaluator;
pub use lie::{Cylinder, GroupPoint, KolmogorovGroup};
pub use operator::{BlockStructure, CoefficientField, ExponentSet, OperatorSpec};
