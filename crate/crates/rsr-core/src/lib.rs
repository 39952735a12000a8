//! Random spectral radius (RSR) of finite matrix families.
//!
//! The RSR of length `n` is `rho_n = rho(A_{s1} A_{s2} ... A_{sn})^{1/n}`,
//! where the indices `s1..sn` are drawn i.i.d. from a weighted finite family
//! of complex `d x d` matrices. This crate computes
//!
//! * exact finite-`n` moments of `rho_n` (structured families) together with
//!   a brute-force enumeration oracle,
//! * the almost-sure limit `rho_inf`, its per-coordinate decomposition, the
//!   maximizer set `J`, and the fluctuation covariance,
//! * the Gaussian and max-of-Gaussian limit laws with their moments,
//! * univariate and multivariate Edgeworth corrections of the law and the
//!   moments of `rho_n`,
//! * eigenvalue perturbation expansions of matrix products to second order,
//! * seeded, scheduling-independent Monte Carlo experiments validating all
//!   of the above.

pub mod asymptotics;
pub mod edgeworth;
pub mod error;
pub mod experiments;
pub mod family;
pub mod gaussmax;
pub mod linalg;
pub mod perturb;
pub mod report;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
