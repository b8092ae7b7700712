// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Sparse precision matrices for stationary and barrier Matérn fields built
//! with linear finite elements, and exact Gaussian inference on top of them.

pub mod error;
pub mod experiments;
pub mod fem;
pub mod gmrf;
pub mod inference;
pub mod mesh;
pub mod precision;
mod sparse;

pub use error::{Error, Result};
