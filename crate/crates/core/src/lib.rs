//! Bootstrap tests for long memory in time-varying coefficient regression.
//!
//! The crate fits `y_i = x_i' beta(t_i) + e_i` by jackknife-corrected local
//! linear smoothing, forms KPSS, R/S, V/S and K/S partial-sum statistics from
//! the residuals, and calibrates them with a Gaussian multiplier bootstrap
//! driven by difference-based long-run covariance estimates.

pub mod bootstrap;
pub mod error;
pub mod kernel;
pub mod locreg;
pub mod lrcov;
pub mod mc;
pub mod rng;
pub mod sample;
pub mod sim;
pub mod stats;
pub mod tuning;

pub use error::{LrdError, Result};
pub use bootstrap::{run_test, TestConfig, TestReport};
pub use lrcov::{CovarianceCorrection, ModelKind};
pub use mc::{power_experiment, size_experiment, MonteCarloReport, PowerAxis};
pub use sample::RegressionSample;
pub use sim::{simulate_model, Model, SimulationSpec};
pub use stats::TestKind;
