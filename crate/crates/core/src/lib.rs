//! Causal effects of functional treatments estimated with covariate-balancing
//! functional propensity score weights.
//!
//! The usual flow is [`fpca::decompose`] → [`fpca::standardize`] →
//! [`balance::estimate_weights`] → [`outcome::fit_truncated`], which
//! [`pipeline`] wraps for simulated and user data.

pub mod balance;
pub mod cli;
pub mod error;
pub mod fdata;
pub mod fpca;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod outcome;
pub mod pipeline;
pub mod simgen;
pub mod streams;

pub use error::{Error, Result};
