//! Fixed-effects panel quantile regression with inference that stays valid
//! under common (time-period) shocks.
//!
//! The pipeline is: [`panel`] data, [`solver::fit_feqr`] for the estimator,
//! [`covariance`] for the robust and conventional sandwich estimates,
//! [`inference`] for Wald intervals, and [`simulation`] for the Monte Carlo
//! study harness.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod covariance;
pub mod inference;
pub mod numeric;
pub mod panel;
pub mod qrcore;
pub mod simulation;
pub mod solver;

pub use panel::{load_panel, load_panel_path, regressor_bound, save_panel, validate, PanelData, PanelError, Schema};
pub use qrcore::{check_loss, objective, residuals, subgrad_h1, subgrad_h2, ParameterPoint, QrError, QuantileLevel};
pub use solver::{certify, fit_feqr, fit_path, Certificate, FeqrFit, SolverError, SolverOptions};
pub use covariance::{robust_covariance, standard_covariance, BandwidthRule, CovarianceError, CovarianceEstimate, CovarianceRate, KernelSpec};
pub use inference::{confidence_intervals, normal_quantile, std_errors, ConfidenceInterval, CovarianceMethod, InferenceError};
pub use simulation::{generate_panel, run_study, true_slope, DgpConfig, SimulationError, StudyConfig, StudyReport};
