//! Numerical laboratory for stochastic reaction-diffusion equations with fast
//! transport, interior noise and boundary noise.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::redundant_guards)]

pub mod coefficients;
pub mod error;
pub mod exit;
pub mod harness;
pub mod ldp;
pub mod noise;
pub mod optimize;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
