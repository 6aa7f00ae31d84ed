//! Finite-element/implicit-Euler discretization of a linear-quadratic
//! stochastic control problem for the heat equation.

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod control;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod forward;
pub mod gradient;
pub mod noise;
pub mod process;
pub mod rates;
pub mod tridiag;

pub use error::{Result, SlqError};
pub use fem::{FemOperators, FieldP0, FieldP1, Mesh1D, Norms, Space};
pub use nalgebra;
pub use noise::{BernoulliTree, NoiseEnsemble, TimeGrid, DEFAULT_SEED};
