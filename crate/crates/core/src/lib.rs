//! Allocation of limited, stochastic worker capacity to tasks with uncertain payoffs.
//!
//! The crate trains gradient-boosted classifiers and capacity-discounted rankers,
//! turns their scores into worker–task assignments, and evaluates the result with
//! expected-profit and expected-precision metrics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod capacity;
pub mod error;
pub mod gbm;
pub mod harness;
pub mod metrics;
pub mod objectives;
pub mod tasks;

pub use error::{Error, Result};
