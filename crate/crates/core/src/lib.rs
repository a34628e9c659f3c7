//! Robust optimal multiple stopping by regression Monte Carlo and pathwise
//! duality.

pub mod ambiguity;
pub mod basis;
pub mod bounds;
pub mod dual;
pub mod engine;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod lsmc;
pub mod model;
pub mod oracle;
pub mod paths;
pub mod payoff;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};

pub type Grid = grid::TimeGrid<f64>;
pub type Ensemble = paths::PathEnsemble<f64>;
pub type Basis = basis::BasisSpec<f64>;
pub type Fit = lsmc::RegressionFit<f64>;
pub type Fit32 = lsmc::RegressionFit<f32>;
/// Exact arithmetic for the tree oracle.
pub type Exact = num_rational::BigRational;
pub type ExactTree = oracle::ScenarioTree<Exact>;
