//! Observed versus expected Fisher information.
//!
//! The crate compares the two usual estimators of the covariance of a maximum
//! likelihood estimate, the inverse expected information `F̄_n(θ̂)⁻¹` and the
//! inverse observed information `H̄_n(θ̂)⁻¹`, on a set of concrete models. It
//! also carries an SPSA optimizer with pluggable perturbation distributions and
//! Monte Carlo estimators of the Fisher information built from simultaneous
//! perturbation Hessian estimates.
//!
//! Module layout:
//!
//! * [`numerics`]: symmetric matrices, finite differences, seeded random streams.
//! * [`models`]: mixture, signal-plus-noise, linear state-space and exponential
//!   family models behind the [`models::Model`] trait.
//! * [`mle`]: damped Newton and localized random search solvers.
//! * [`fisher`]: covariance estimators, discrepancy studies, score cumulants.
//! * [`spsa`]: SPSA iterate, perturbation distributions, superiority conditions.
//! * [`mcfim`]: Monte Carlo Fisher information estimators and benchmarks.
//! * [`experiment`]: config-driven experiment runner and table output.

pub mod error;
pub mod experiment;
pub mod fisher;
pub mod mcfim;
pub mod mle;
pub mod models;
pub mod numerics;
pub mod spsa;
pub mod stats;

pub use error::{FimError, Result};
pub use numerics::linalg::{spectral_norm, sym_inverse, Matrix, SymMat, Vector};
pub use numerics::rng::RngStream;
