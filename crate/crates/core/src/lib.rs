//! Stochastic heat equations with Dirichlet data on angular domains and
//! polygons: wedge heat kernels, weighted Sobolev norms, kernel-propagation
//! and finite-difference solvers, and an experiment harness for the
//! weighted regularity estimates.

pub mod error;
pub mod fields;
pub mod geometry;
pub mod green;
pub mod harness;
pub mod solver;
pub mod specialfn;

pub use error::{Error, Result};
