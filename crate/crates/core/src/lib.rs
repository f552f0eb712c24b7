//! Landmark column selection for column subset selection and Nyström
//! approximation by continuous relaxation.
//!
//! Every numeric routine is generic over [`scalar::Real`]; the aliases below
//! fix the usual double-precision instantiations.

pub mod baselines;
pub mod cli;
pub mod cssp;
mod dense;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod linop;
pub mod nystrom;
pub mod optimizer;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};

pub type DenseMatrixF64 = linop::DenseMatrix<f64>;
pub type DenseMatrixF32 = linop::DenseMatrix<f32>;
pub type OptimizerConfigF64 = optimizer::OptimizerConfig<f64>;
pub type SelectionResultF64 = optimizer::SelectionResult<f64>;
pub type HyperParamsF64 = estimator::HyperParams<f64>;
pub type CgConfigF64 = solver::CgConfig<f64>;
