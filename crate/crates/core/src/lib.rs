//! Time-varying dynamic Bayesian network (TVDBN) structure learning and
//! dynamic causal graph convolution forecasting for multivariate
//! traffic-style series.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense tensors, the matrix exponential, a tape-based
//!   reverse-mode differentiator, finite-difference gradient checks and the
//!   Adam optimiser.
//! - [`data`]: speed/distance table ingestion, the distance-kernel prior
//!   graph, Z-score normalisation, windowing and chronological splits.
//! - [`graphops`]: spectral and spatial graph convolutions and the two-step
//!   dynamic convolution.
//! - [`grcsl`]: the recurrent causal structure learner that emits one pair of
//!   intra-slice / inter-slice graphs per window step.
//! - [`constraint`]: the acyclicity functional, the structure-learning loss
//!   and the augmented Lagrangian training loop.
//! - [`dgcpm`]: the forecaster that consumes the learned graphs.
//! - [`metrics`]: masked MAE / RMSE / MAPE per horizon.
//! - [`synth`]: ground-truth TVDBN generation and recovery scoring.
//! - [`checks`]: the finite-difference gradient suite.

pub mod checks;
pub mod constraint;
pub mod data;
pub mod dgcpm;
pub mod error;
pub mod graphops;
pub mod grcsl;
pub mod metrics;
pub mod numerics;
pub mod synth;

pub use error::{Error, Result};
