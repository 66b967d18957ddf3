//! Bayesian accelerated-failure-time survival analysis with a neural-network
//! risk function, fitted to right-censored records by mean-field
//! variational inference with score-function gradients.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod dataset;
pub mod error;
pub mod network;
pub mod predictor;
pub mod stats;
pub mod store;
pub mod trainer;
pub mod variational;

pub use error::{Error, Result};
