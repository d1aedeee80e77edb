//! Energy-driven stochastic state reduction on Kähler state manifolds.
//!
//! The crate is organised bottom-up: [`geometry`] evaluates the Kähler tensors
//! of a state manifold, [`observables`] turns Hermitian operators into
//! expectation functions on it, [`dynamics`] integrates the reduction
//! diffusion, and [`analysis`] turns ensembles into verdicts and carries the
//! independent oracles.

// Tensor code indexes several arrays per loop; negated float comparisons are
// deliberate so that NaN takes the failing branch.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod observables;

pub use error::{Error, Result};
