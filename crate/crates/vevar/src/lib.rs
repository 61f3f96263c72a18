//! Varying-effects vector autoregression.
//!
//! Multi-subject, multi-group VAR network estimation in which group-level
//! edge strengths are smooth functions of subject covariates. Edges carry a
//! spike-and-slab indicator, each covariate effect is a GP-distributed
//! function with its own spike-and-slab weight, and the model is fitted by
//! coordinate-ascent variational inference.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod error;
pub mod exec;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod selector;
pub mod sim;
pub mod vi;

pub use error::{Error, Result};
