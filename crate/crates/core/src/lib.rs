//! Speculative array processing: a fast convolutional classifier backed by a
//! covariance-domain GLRT validator, with the synthetic uniform-linear-array
//! data, gradient attacks and latency accounting needed to evaluate it.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod error;
pub mod glrt;
pub mod linalg;
pub mod neural;
pub mod signal;
pub mod speculative;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Norm, RealTensor};
