//! Predict-then-cluster toolkit for meal-delivery platforms.
//!
//! Zone-level 15-minute demand forecasting with tree ensembles, dynamic zone
//! clustering on the forecasts, forecast and cluster evaluation, and a fleet
//! simulator for prediction-informed courier relocation.

// negated comparisons also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod benchmarks;
pub mod boosting;
pub mod clustering;
pub mod domain;
pub mod error;
pub mod forest;
pub mod ingest;
pub mod metrics;
pub mod simulator;
pub mod trees;
pub mod tuning;

pub use error::{Error, Result};
