//! Risk-aware trajectory optimization for a planar tethered UUV-USV system.

// `!(a > b)` is used on purpose to reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod control;
pub mod error;
pub mod evaluation;
pub mod jet;
pub mod model;
pub mod optimizer;
pub mod stochastic;

pub use error::{Error, Result};
