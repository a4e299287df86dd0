//! Conformal prediction intervals for regression when the calibration set's
//! labels carry additive noise of known kernel.
//!
//! Plain split conformal calibration on noisy labels over-covers: dispersive
//! noise inflates the score quantile and with it every interval. This crate
//! recovers a near-noise-free threshold instead, by discretizing the label
//! axis, estimating the joint coverage-density matrix from the noisy labels,
//! deconvolving it row-wise against the noise kernel, and scanning the
//! threshold down until the estimated clean coverage reaches the target.
//!
//! Module map:
//! - [`model`]: records, scores, intervals.
//! - [`split`]: order-statistic split-CP calibration (oracle and noisy
//!   baselines).
//! - [`grid`]: label binning, the empirical coverage-density matrix, kernel
//!   discretization.
//! - [`deconv`]: masked box-constrained ridge deconvolution (projected
//!   gradient).
//! - [`robust`]: the iterative threshold scan.
//! - [`noise`]: noise-level estimation from model uncertainties.
//! - [`synth`]: seeded synthetic benchmark data and Monte Carlo oracles.
//! - [`eval`]: coverage/length metrics and the three-method comparison.

pub mod deconv;
pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod noise;
pub mod robust;
pub mod split;
pub mod synth;
mod util;

pub use error::{Error, LabelKind, Result};
pub use model::{CalibrationResult, Interval, Method, PredictionRecord};
