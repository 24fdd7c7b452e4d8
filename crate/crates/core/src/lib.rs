//! Dual approximate dynamic programming for stochastic optimal control
//! problems made of independent units coupled by a static equality.
//!
//! Everything numeric is generic over [`Scalar`]; the `f64` aliases at the
//! bottom of this file are what the command-line front end uses.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dadp;
pub mod dp;
pub mod error;
pub mod linalg;
pub mod model;
pub mod prices;
pub mod quadratic;
pub mod scalar;

pub use error::{Error, IssueKind, Result, ValidationIssue};
pub use scalar::Scalar;

pub type Problem = model::ProblemSpec<f64>;
pub type Validated = model::ValidatedProblem<f64>;
pub type Noise = model::NoiseModel<f64>;
pub type Path = model::NoisePath<f64>;
pub type Prices = prices::PriceModel<f64>;
pub type Joint = dp::JointSolution<f64>;
pub type Iterate = dadp::DadpIterate<f64>;
pub type Quadratic = quadratic::QuadraticSpec<f64>;
