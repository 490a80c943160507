//! Training and evaluation toolkit for speech enhancement from noisy
//! targets.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mixit;
pub mod model;
pub mod train;

pub use error::{Error, Result};
