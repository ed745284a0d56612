//! Low-multilinear-rank covariance function estimation for multidimensional
//! functional data.
//!
//! The estimator fits a folded covariance function in a tensor-product RKHS
//! with a squared-error loss on off-diagonal cross products, penalized by a
//! mix of the trace norm of the square unfolding (restricted to PSD operators)
//! and the trace norms of the one-way unfoldings. The finite-dimensional
//! problem is solved with an accelerated ADMM.

pub mod cli;
pub mod container;
pub mod dataset;
pub mod error;
pub mod kernel;
pub mod quadrature;
pub mod sim;
pub mod spectral;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
