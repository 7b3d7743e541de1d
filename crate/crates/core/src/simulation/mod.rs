//! Monte Carlo study of the estimator and its intervals under the
//! location-scale design with a common time shock.

mod config;
mod dgp;
mod report;
pub mod rng;
mod study;

use thiserror::Error;

pub use config::{load_config, parse_config};
pub use dgp::{generate_panel, true_slope, DgpConfig};
pub use report::{
    read_report_csv, render_tables, write_outputs, write_report_csv, write_table1_csv, write_table2_csv,
};
pub use study::{
    aggregate, run_grid, run_replication, run_replications, run_study, summarize, ReplicationRecord, StudyCell,
    StudyConfig, StudyReport, TauRecord,
};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no successful replication in cell (N={n_units}, T={n_periods}, tau={tau})")]
    EmptyCell { n_units: usize, n_periods: usize, tau: f64 },
    #[error("study aborted: every replication failed at (N={n_units}, T={n_periods}, tau={tau}); first error: {first_error}")]
    StudyAborted {
        n_units: usize,
        n_periods: usize,
        tau: f64,
        first_error: String,
    },
    #[error("generated panel is invalid: {0}")]
    Panel(#[from] crate::panel::PanelError),
    #[error("i/o error: {0}")]
    Io(String),
}
