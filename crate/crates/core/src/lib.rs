//! Personalized pricing under differential privacy.
//!
//! Two quadrisection policies over a hypercube partition of the context
//! space: [`cppq::Cppq`] releases its statistics through tree-based
//! aggregation (central privacy) and [`lppq::Lppq`] privatizes each customer's
//! record before it is stored (local privacy). The [`harness`] runs them
//! against the synthetic demand models in [`env`] and accounts expected regret.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod cppq;
pub mod env;
pub mod error;
pub mod harness;
pub mod lppq;
pub mod partition;
pub mod policy;
pub mod prng;
pub mod svg;
pub mod tree_agg;

pub use error::{Error, Result};
