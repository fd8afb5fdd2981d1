//! Concept-subspace laboratory.
//!
//! Ridge predictors and their exact decomposition into a concept term and
//! off-subspace leakage, Monte Carlo rate checks, subspace recovery from
//! task-conditioned moments, and a causal intervention engine over
//! activation matrices with the accompanying geometry diagnostics.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod identify;
pub mod intervention;
pub mod io;
pub mod linalg;
pub mod model;
pub mod rates;
pub mod rng;
pub mod stats;
pub mod subspace;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
