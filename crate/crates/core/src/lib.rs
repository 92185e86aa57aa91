//! Uplink cell-free massive MIMO simulation with local MMSE combining and
//! alternating max-min SINR optimization of transmit powers and CPU
//! weighting coefficients.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod combining;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::NetworkConfig;
pub use harness::{ExperimentSpec, Scheme};
pub use linalg::{ComplexMatrix, ComplexVector, C64};
