//! Fixed-effects quantile regression fits and their optimality certificate.
//!
//! [`fit_feqr`] runs an interior point method to near-optimality and then
//! (with `refine`) crosses over to an exact basic solution. At an exact basic
//! optimum each unit interpolates at most p + 1 observations, which bounds the
//! subgradients: `sup_i |H1_i| <= 2(p+1)/T` and
//! `||H2||_inf <= 2(p+1) max|x| / T`. [`certify`] checks those bounds.

mod crossover;
mod ipm;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::panel::{self, PanelData};
use crate::qrcore::{self, ParameterPoint, QrError, QuantileLevel};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("normal equations are singular: regressors are collinear with the unit intercepts (smallest within-unit eigenvalue {min_eigenvalue:e})")]
    SingularNormalEquations { min_eigenvalue: f64 },
    #[error("solver did not converge at tau = {}: certificate max|H1| = {:e} (bound {:e}), ||H2|| = {:e} (bound {:e})",
        .0.tau.value(), .0.certificate.max_h1, .0.certificate.bound_h1, .0.certificate.h2_norm, .0.certificate.bound_h2)]
    DidNotConverge(Box<FeqrFit>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error(transparent)]
    Qr(#[from] QrError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub duality_gap_tol: f64,
    pub tol_cert: f64,
    pub refine: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            duality_gap_tol: 1e-9,
            tol_cert: 1e-6,
            refine: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidArgument("max_iterations must be positive".into()));
        }
        if self.duality_gap_tol.is_nan() || self.duality_gap_tol <= 0.0 || self.tol_cert.is_nan() || self.tol_cert <= 0.0 {
            return Err(SolverError::InvalidArgument("tolerances must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Subgradient bounds at a fitted point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub max_h1: f64,
    pub h2_norm: f64,
    pub bound_h1: f64,
    pub bound_h2: f64,
    pub tolerance: f64,
    pub passes: bool,
}

#[derive(Debug, Clone)]
pub struct FeqrFit {
    pub tau: QuantileLevel,
    pub theta: ParameterPoint,
    pub objective_value: f64,
    /// N x T residual matrix at `theta`.
    pub residuals: DMatrix<f64>,
    pub certificate: Certificate,
    /// Interior point iterations plus crossover pivots.
    pub iterations: usize,
    pub converged: bool,
}

impl FeqrFit {
    pub fn alpha(&self) -> &[f64] {
        &self.theta.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.theta.beta
    }
}

/// Evaluates the certificate at an arbitrary point.
pub fn certificate_at(
    panel: &PanelData,
    theta: &ParameterPoint,
    tau: QuantileLevel,
    tol_cert: f64,
) -> Result<Certificate, QrError> {
    let h1 = qrcore::subgrad_h1_all(panel, theta, tau)?;
    let h2 = qrcore::subgrad_h2(panel, theta, tau)?;
    let max_h1 = h1.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let h2_norm = h2.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let k = 2.0 * (panel.n_regressors() + 1) as f64 / panel.n_periods() as f64;
    let bound_h1 = k + tol_cert;
    let bound_h2 = k * panel::regressor_bound(panel) + tol_cert;
    Ok(Certificate {
        max_h1,
        h2_norm,
        bound_h1,
        bound_h2,
        tolerance: tol_cert,
        passes: max_h1 <= bound_h1 && h2_norm <= bound_h2,
    })
}

/// Recomputes the certificate of `fit` with the tolerance it was issued with.
pub fn certify(panel: &PanelData, fit: &FeqrFit) -> Result<Certificate, QrError> {
    if fit.residuals.nrows() != panel.n_units() || fit.residuals.ncols() != panel.n_periods() {
        return Err(QrError::DimensionMismatch {
            what: "residuals",
            expected: panel.n_obs(),
            found: fit.residuals.len(),
        });
    }
    certificate_at(panel, &fit.theta, fit.tau, fit.certificate.tolerance)
}

/// Within (unit-demeaned) least squares. Also the identification check: the
/// demeaned cross-product matrix is the Schur complement of the unweighted
/// normal equations.
fn within_least_squares(panel: &PanelData) -> Result<ParameterPoint, SolverError> {
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let mut xbar = vec![0.0; n * p];
    let mut ybar = vec![0.0; n];
    for i in 0..n {
        for s in 0..t {
            ybar[i] += panel.y_at(i, s);
            for (k, v) in panel.x_at(i, s).iter().enumerate() {
                xbar[i * p + k] += v;
            }
        }
        ybar[i] /= t as f64;
        for k in 0..p {
            xbar[i * p + k] /= t as f64;
        }
    }
    let mut sxx = DMatrix::<f64>::zeros(p, p);
    let mut sxy = DVector::<f64>::zeros(p);
    let mut raw_trace = 0.0;
    for i in 0..n {
        for s in 0..t {
            let x = panel.x_at(i, s);
            let yd = panel.y_at(i, s) - ybar[i];
            for a in 0..p {
                raw_trace += x[a] * x[a];
                let xa = x[a] - xbar[i * p + a];
                sxy[a] += xa * yd;
                for b in 0..p {
                    sxx[(a, b)] += xa * (x[b] - xbar[i * p + b]);
                }
            }
        }
    }
    let min_eigenvalue = crate::numeric::min_eigenvalue(&sxx);
    let threshold = 1e-12 * raw_trace.max(f64::MIN_POSITIVE);
    if min_eigenvalue.is_nan() || min_eigenvalue <= threshold {
        return Err(SolverError::SingularNormalEquations { min_eigenvalue });
    }
    let beta = sxx
        .cholesky()
        .ok_or(SolverError::SingularNormalEquations { min_eigenvalue })?
        .solve(&sxy);
    let alpha = (0..n)
        .map(|i| ybar[i] - (0..p).map(|k| xbar[i * p + k] * beta[k]).sum::<f64>())
        .collect();
    Ok(ParameterPoint::new(alpha, beta.iter().copied().collect()))
}

fn fit_from(
    panel: &PanelData,
    tau: QuantileLevel,
    options: &SolverOptions,
    warm_start: Option<&ParameterPoint>,
) -> Result<FeqrFit, SolverError> {
    options.validate()?;
    let violations = panel::validate(panel);
    if !violations.is_empty() {
        let msg = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(SolverError::InvalidPanel(msg));
    }
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    if t < p + 2 {
        log::warn!("T = {t} < p + 2 = {}: slope identification is fragile", p + 2);
    }

    let ls = within_least_squares(panel)?;
    let start = match warm_start {
        Some(theta) => {
            theta.check(panel)?;
            theta
        }
        None => &ls,
    };
    // Crossover finishes the job exactly, so the interior phase can stop at
    // a looser gap.
    let ipm_tol = if options.refine {
        options.duality_gap_tol.max(1e-7)
    } else {
        options.duality_gap_tol
    };
    let interior = ipm::solve(panel, tau, start, options.max_iterations, ipm_tol);
    let mut theta = interior.theta;
    let mut iterations = interior.iterations;
    let mut optimal = interior.converged;

    if options.refine {
        let max_pivots = 10 * (n + p) + 100;
        if let Some(vertex) = crossover::refine(panel, tau, &theta, max_pivots) {
            iterations += vertex.pivots;
            let interior_value = qrcore::objective_unchecked(panel, &theta, tau);
            let vertex_value = qrcore::objective_unchecked(panel, &vertex.theta, tau);
            if vertex.optimal || vertex_value <= interior_value {
                theta = vertex.theta;
                optimal = vertex.optimal || optimal;
            }
        }
    }

    let objective_value = qrcore::objective_unchecked(panel, &theta, tau);
    let residuals = qrcore::residuals(panel, &theta)?;
    let certificate = certificate_at(panel, &theta, tau, options.tol_cert)?;
    let converged = optimal && certificate.passes;
    let fit = FeqrFit {
        tau,
        theta,
        objective_value,
        residuals,
        certificate,
        iterations,
        converged,
    };
    if converged {
        Ok(fit)
    } else {
        Err(SolverError::DidNotConverge(Box::new(fit)))
    }
}

/// Minimizes `(1/NT) sum_i sum_t rho_tau(Y_it - alpha_i - X_it' beta)`.
pub fn fit_feqr(
    panel: &PanelData,
    tau: QuantileLevel,
    options: &SolverOptions,
) -> Result<FeqrFit, SolverError> {
    fit_from(panel, tau, options, None)
}

/// Fits each quantile level in order, warm-starting from the previous
/// solution. Per-level failures are returned in place; the remaining levels
/// are still fitted.
pub fn fit_path(
    panel: &PanelData,
    taus: &[QuantileLevel],
    options: &SolverOptions,
) -> Result<Vec<Result<FeqrFit, SolverError>>, SolverError> {
    if taus.is_empty() {
        return Err(SolverError::InvalidArgument("at least one quantile level is required".into()));
    }
    let mut out = Vec::with_capacity(taus.len());
    let mut previous: Option<ParameterPoint> = None;
    for &tau in taus {
        let result = fit_from(panel, tau, options, previous.as_ref());
        if let Ok(fit) = &result {
            previous = Some(fit.theta.clone());
        }
        out.push(result);
    }
    Ok(out)
}
