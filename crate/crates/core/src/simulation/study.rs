//! Monte Carlo replications and their aggregation.

use rayon::prelude::*;

use super::dgp::{generate_panel, true_slope, DgpConfig};
use super::SimulationError;
use crate::covariance::{robust_covariance, standard_covariance, BandwidthRule, KernelSpec};
use crate::inference::confidence_intervals;
use crate::qrcore::QuantileLevel;
use crate::solver::{fit_path, Certificate, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub dgp: DgpConfig,
    pub replications: usize,
    pub level: f64,
    pub bandwidth_rule: BandwidthRule,
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            replications: 2000,
            level: 0.95,
            bandwidth_rule: BandwidthRule::SilvermanN,
            workers: 1,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        self.dgp.validate()?;
        if self.replications == 0 {
            return Err(SimulationError::InvalidConfig("replications must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(SimulationError::InvalidConfig(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.workers == 0 {
            return Err(SimulationError::InvalidConfig("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one replication at one quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct TauRecord {
    pub tau: QuantileLevel,
    pub beta_hat: f64,
    pub covered_robust: bool,
    pub covered_standard: bool,
    pub ci_width_robust: f64,
    pub ci_width_standard: f64,
    pub certificate_passed: bool,
    pub certificate: Certificate,
    pub v_robust: f64,
    pub v_standard: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub index: u64,
    /// One entry per configured tau; `Err` holds the failure message.
    pub per_tau: Vec<Result<TauRecord, String>>,
}

/// Runs replication `replication_index`: draw, fit every tau, build both
/// intervals, and compare them with the true slope.
pub fn run_replication(study: &StudyConfig, replication_index: u64) -> Result<ReplicationRecord, SimulationError> {
    study.validate()?;
    Ok(replicate(study, replication_index))
}

fn replicate(study: &StudyConfig, index: u64) -> ReplicationRecord {
    let dgp = &study.dgp;
    let fail_all = |msg: String| ReplicationRecord {
        index,
        per_tau: dgp.taus.iter().map(|_| Err(msg.clone())).collect(),
    };
    let panel = match generate_panel(dgp, index) {
        Ok(p) => p,
        Err(e) => return fail_all(e.to_string()),
    };
    let fits = match fit_path(&panel, &dgp.taus, &SolverOptions::default()) {
        Ok(f) => f,
        Err(e) => return fail_all(e.to_string()),
    };
    let per_tau = fits
        .into_iter()
        .zip(&dgp.taus)
        .map(|(fit, &tau)| -> Result<TauRecord, String> {
            let fit = fit.map_err(|e| e.to_string())?;
            let kernel = KernelSpec::from_fit(&fit, study.bandwidth_rule).map_err(|e| e.to_string())?;
            let robust = robust_covariance(&panel, &fit, tau, &kernel).map_err(|e| e.to_string())?;
            let standard = standard_covariance(&panel, &fit, tau, &kernel).map_err(|e| e.to_string())?;
            let ci_r = confidence_intervals(&fit, &robust, study.level).map_err(|e| e.to_string())?;
            let ci_s = confidence_intervals(&fit, &standard, study.level).map_err(|e| e.to_string())?;
            let target = true_slope(tau, dgp.beta, dgp.gamma_scale);
            Ok(TauRecord {
                tau,
                beta_hat: fit.beta()[0],
                covered_robust: ci_r[0].contains(target),
                covered_standard: ci_s[0].contains(target),
                ci_width_robust: ci_r[0].width(),
                ci_width_standard: ci_s[0].width(),
                certificate_passed: fit.certificate.passes,
                certificate: fit.certificate,
                v_robust: robust.v_hat[(0, 0)],
                v_standard: standard.v_hat[(0, 0)],
                bandwidth: kernel.bandwidth,
            })
        })
        .collect();
    ReplicationRecord { index, per_tau }
}

/// Runs replications `indices` on a pool of `study.workers` threads. The
/// output is in index order whatever the scheduling.
pub fn run_replications(
    study: &StudyConfig,
    indices: std::ops::Range<u64>,
) -> Result<Vec<ReplicationRecord>, SimulationError> {
    study.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(study.workers)
        .build()
        .map_err(|e| SimulationError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| indices.into_par_iter().map(|r| replicate(study, r)).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub n_units: usize,
    pub n_periods: usize,
    pub tau: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage_robust: f64,
    pub coverage_standard: f64,
    pub mean_ci_width_robust: f64,
    pub mean_ci_width_standard: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyReport {
    pub cells: Vec<StudyCell>,
}

/// Summarizes the successful records of one (N, T, tau) cell against
/// `target`. Sums run sequentially in record order.
pub fn aggregate(
    n_units: usize,
    n_periods: usize,
    tau: QuantileLevel,
    target: f64,
    records: &[&TauRecord],
    n_failed: usize,
) -> Result<StudyCell, SimulationError> {
    if records.is_empty() {
        return Err(SimulationError::EmptyCell {
            n_units,
            n_periods,
            tau: tau.value(),
        });
    }
    let m = records.len() as f64;
    let mean = |f: &dyn Fn(&TauRecord) -> f64| records.iter().map(|r| f(r)).sum::<f64>() / m;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let bias = mean(&|r| r.beta_hat) - target;
    let rmse = mean(&|r| (r.beta_hat - target).powi(2)).sqrt();
    Ok(StudyCell {
        n_units,
        n_periods,
        tau: tau.value(),
        bias,
        // guards against last-bit rounding below |bias|
        rmse: rmse.max(bias.abs()),
        coverage_robust: mean(&|r| flag(r.covered_robust)),
        coverage_standard: mean(&|r| flag(r.covered_standard)),
        mean_ci_width_robust: mean(&|r| r.ci_width_robust),
        mean_ci_width_standard: mean(&|r| r.ci_width_standard),
        n_failed,
    })
}

/// Aggregates replication records of `study` into one cell per tau.
pub fn summarize(study: &StudyConfig, records: &[ReplicationRecord]) -> Result<StudyReport, SimulationError> {
    let dgp = &study.dgp;
    let mut cells = Vec::with_capacity(dgp.taus.len());
    for (k, &tau) in dgp.taus.iter().enumerate() {
        let ok: Vec<&TauRecord> = records.iter().filter_map(|r| r.per_tau[k].as_ref().ok()).collect();
        let failed = records.len() - ok.len();
        if failed > 0 {
            log::warn!(
                "{failed} of {} replications failed at (N={}, T={}, tau={})",
                records.len(),
                dgp.n_units,
                dgp.n_periods,
                tau.value()
            );
        }
        let target = true_slope(tau, dgp.beta, dgp.gamma_scale);
        let cell = aggregate(dgp.n_units, dgp.n_periods, tau, target, &ok, failed).map_err(|_| {
            SimulationError::StudyAborted {
                n_units: dgp.n_units,
                n_periods: dgp.n_periods,
                tau: tau.value(),
                first_error: records
                    .iter()
                    .find_map(|r| r.per_tau[k].as_ref().err().cloned())
                    .unwrap_or_default(),
            }
        })?;
        cells.push(cell);
    }
    Ok(StudyReport { cells })
}

/// Runs all replications of `study` and aggregates them.
pub fn run_study(study: &StudyConfig) -> Result<StudyReport, SimulationError> {
    let records = run_replications(study, 0..study.replications as u64)?;
    summarize(study, &records)
}

/// Runs several studies (e.g. a grid over (N, T)) and concatenates their cells.
pub fn run_grid(studies: &[StudyConfig]) -> Result<StudyReport, SimulationError> {
    let mut report = StudyReport::default();
    for study in studies {
        log::info!(
            "running (N={}, T={}) with {} replications",
            study.dgp.n_units,
            study.dgp.n_periods,
            study.replications
        );
        report.cells.extend(run_study(study)?.cells);
    }
    Ok(report)
}
