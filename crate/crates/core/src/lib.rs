//! Regularization of ill-posed inverse problems under stochastic noise.
//!
//! Deterministic regularization methods are driven by a stochastic noise
//! level: either an analytic Ky Fan bound for Gaussian noise, or an inflated
//! expectation `tau(eta) * E||eps||`. The crate provides the noise model,
//! forward operators, the solvers, parameter-choice rules and a Monte Carlo
//! harness that measures the resulting convergence rates.
//!
//! The numerical core is generic over the scalar type through [`Real`]; the
//! aliases at the crate root fix it to `f64`, which is what the experiment
//! harness uses.

pub mod error;
pub mod harness;
pub mod noise;
pub mod operators;
pub mod param_choice;
pub mod regularization;
pub mod rng;
mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Real;

/// Gaussian noise description in double precision.
pub type NoiseSpec = noise::NoiseSpec<f64>;
/// Empirical distance sample in double precision.
pub type EmpiricalSample = noise::EmpiricalSample<f64>;
/// Singular-system operator in double precision.
pub type SvdOperator = operators::SvdOperator<f64>;
/// Autoconvolution discretization in double precision.
pub type AutoconvGrid = operators::AutoconvGrid<f64>;
/// Besov weights in double precision.
pub type BesovWeights = operators::BesovWeights<f64>;
/// Spectral filter in double precision.
pub type FilterKind = regularization::FilterKind<f64>;
/// Solver report in double precision.
pub type SolveReport = regularization::SolveReport<f64>;
/// Parameter-choice rule in double precision.
pub type ParamRule = param_choice::ParamRule<f64>;
/// Besov balancing parameters in double precision.
pub type BesovBalanceParams = param_choice::BesovBalanceParams<f64>;
