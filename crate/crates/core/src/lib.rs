//! Markov mimics of processes with memory.
//!
//! A mimic is a Markov process built to reproduce distributional summaries
//! of a given, possibly history-dependent process. This crate constructs
//! and verifies mimics in four settings:
//!
//! - [`path_measure`]: laws on finite path spaces; the mimic chain matches
//!   every one-dimensional marginal, and Markovianization pins a single
//!   interior time while preserving marginals.
//! - [`entropy_min`]: minimum-relative-entropy laws under marginal
//!   constraints, computed by iterative proportional fitting; minimizers
//!   are Markov.
//! - [`occupation`]: discounted occupation measures of controlled chains;
//!   a stationary policy read off the measure's disintegration reproduces
//!   it exactly.
//! - [`sde`]: Monte Carlo simulation of controlled diffusions and jump
//!   processes, projection of path-dependent controls onto the current
//!   state, and two-sample tests comparing time-slice marginals.
//!
//! Everything is generic over the float type through [`Scalar`]; the `*64`
//! aliases fix `f64` for the common case. [`textio`] gives each object a
//! line-oriented text format with bit-stable round trips.

pub mod entropy_min;
pub mod error;
pub mod fixtures;
mod linalg;
pub mod occupation;
pub mod path_measure;
pub mod scalar;
pub mod sde;
pub mod space;
pub mod textio;

pub use error::{MimicError, Result};
pub use scalar::Scalar;
pub use space::{ActionSpace, StateSpace};

pub type PathLaw64 = path_measure::PathLaw<f64>;
pub type MarkovChain64 = path_measure::MarkovChainModel<f64>;
pub type ConstraintSet64 = entropy_min::MarginalConstraintSet<f64>;
pub type ControlledChain64 = occupation::ControlledChain<f64>;
pub type OccupationMeasure64 = occupation::OccupationMeasure<f64>;
pub type DiffusionModel64 = sde::DiffusionModel<f64>;
pub type JumpModel64 = sde::JumpModel<f64>;
pub type Marginals64 = sde::EmpiricalMarginals<f64>;
pub type ProjectedPolicy64 = sde::ProjectedPolicy<f64>;
