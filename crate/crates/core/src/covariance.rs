//! Kernel-based sandwich covariance estimates for the common slope.
//!
//! The robust estimator is `Gamma^-1 Sigma Gamma^-1` where `Sigma` is the
//! variance across periods of the cross-sectional average score
//!
//! ```text
//!   m_t = (1/N) sum_i (tau - 1{e_it <= 0}) (X_it - gamma_i),
//! ```
//!
//! and `Gamma = (1/NT) sum K_h(e_it) X_it (X_it - gamma_i)'` with the
//! density-weighted unit means `gamma_i`. Averaging across units within a
//! period absorbs any common shock, so the estimate is valid with or without
//! one; its rate tag is sqrt(T).
//!
//! The conventional comparator replaces `Sigma` by the independence-case
//! meat `tau(1 - tau)/(NT) sum (X_it - gamma_i)(X_it - gamma_i)'` at rate
//! sqrt(NT).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numeric::{self, pairwise_sum_by};
use crate::panel::PanelData;
use crate::qrcore::QuantileLevel;
use crate::solver::FeqrFit;

/// Lower bound applied to rule-of-thumb bandwidths.
pub const BANDWIDTH_FLOOR: f64 = 0.05;
/// Largest condition number of the symmetrized `Gamma` that is inverted.
pub const MAX_GAMMA_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovarianceError {
    #[error("Gamma is numerically singular (condition number {condition_number:e}, eigenvalues {eigenvalues:?})")]
    SingularGamma {
        condition_number: f64,
        eigenvalues: Vec<f64>,
    },
    #[error("estimated density of unit {unit} underflowed to zero")]
    ZeroDensity { unit: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("need at least two residuals for a bandwidth, got {0}")]
    TooFewResiduals(usize),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("fit was computed at tau = {fit} but covariance requested at tau = {requested}")]
    TauMismatch { fit: f64, requested: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self, CovarianceError> {
        if bandwidth > 0.0 && bandwidth.is_finite() {
            Ok(Self {
                kind: KernelKind::Gaussian,
                bandwidth,
            })
        } else {
            Err(CovarianceError::InvalidBandwidth(bandwidth))
        }
    }

    /// Gaussian kernel with the rule-of-thumb bandwidth of the fit's residuals.
    pub fn from_fit(fit: &FeqrFit, rule: BandwidthRule) -> Result<Self, CovarianceError> {
        let bw = bandwidth_with_rule(&fit.residuals, fit.residuals.nrows(), rule)?;
        Self::gaussian(bw.value)
    }
}

/// `K_h(u) = h^-1 K(u / h)`.
#[inline]
pub fn kernel_weight(u: f64, spec: &KernelSpec) -> f64 {
    let h = spec.bandwidth;
    match spec.kind {
        KernelKind::Gaussian => numeric::normal_pdf(u / h) / h,
    }
}

/// Which sample size enters the `n^(-1/5)` factor of the bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthRule {
    /// Number of units N.
    #[default]
    SilvermanN,
    /// Total observations N*T.
    SilvermanNT,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub value: f64,
    /// The floor was binding.
    pub floored: bool,
    /// The residuals had zero spread.
    pub degenerate: bool,
}

/// `max(1.06 * sd(residuals) * N^(-1/5), 0.05)` with `sd` pooled over all
/// residuals (denominator count - 1).
pub fn silverman_bandwidth(residuals: &DMatrix<f64>, n_units: usize) -> Result<Bandwidth, CovarianceError> {
    bandwidth_with_rule(residuals, n_units, BandwidthRule::SilvermanN)
}

pub fn bandwidth_with_rule(
    residuals: &DMatrix<f64>,
    n_units: usize,
    rule: BandwidthRule,
) -> Result<Bandwidth, CovarianceError> {
    let values = residuals.as_slice();
    let m = values.len();
    if m < 2 {
        return Err(CovarianceError::TooFewResiduals(m));
    }
    let mean = pairwise_sum_by(m, |k| values[k]) / m as f64;
    let var = pairwise_sum_by(m, |k| (values[k] - mean).powi(2)) / (m - 1) as f64;
    let sd = var.sqrt();
    let size = match rule {
        BandwidthRule::SilvermanN => n_units.max(1) as f64,
        BandwidthRule::SilvermanNT => m as f64,
    };
    if sd == 0.0 {
        log::warn!("residuals have zero spread; using the bandwidth floor {BANDWIDTH_FLOOR}");
        return Ok(Bandwidth {
            value: BANDWIDTH_FLOOR,
            floored: true,
            degenerate: true,
        });
    }
    let raw = 1.06 * sd * size.powf(-0.2);
    Ok(Bandwidth {
        value: raw.max(BANDWIDTH_FLOOR),
        floored: raw < BANDWIDTH_FLOOR,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceRate {
    /// `var(beta_j) ~ V_jj / T`
    RobustSqrtT,
    /// `var(beta_j) ~ V_jj / (NT)`
    StandardSqrtNT,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    /// Middle matrix of the sandwich: the score variance across periods for
    /// the robust estimate, the independence-case meat for the standard one.
    pub sigma_hat: DMatrix<f64>,
    /// Unsymmetrized Jacobian estimate.
    pub gamma_mat_hat: DMatrix<f64>,
    /// N x p, one row per unit.
    pub gamma_i_hat: DMatrix<f64>,
    pub f_i_hat: Vec<f64>,
    pub v_hat: DMatrix<f64>,
    pub rate: CovarianceRate,
    pub bandwidth: f64,
    pub gamma_condition: f64,
}

fn check_dims(panel: &PanelData, fit: &FeqrFit) -> Result<(), CovarianceError> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if fit.residuals.nrows() != n || fit.residuals.ncols() != t {
        return Err(CovarianceError::DimensionMismatch {
            what: "residuals",
            expected: n * t,
            found: fit.residuals.len(),
        });
    }
    if fit.theta.beta.len() != panel.n_regressors() {
        return Err(CovarianceError::DimensionMismatch {
            what: "beta",
            expected: panel.n_regressors(),
            found: fit.theta.beta.len(),
        });
    }
    Ok(())
}

fn check_gamma_rows(panel: &PanelData, gamma_i_hat: &DMatrix<f64>) -> Result<(), CovarianceError> {
    let expected = (panel.n_units(), panel.n_regressors());
    if gamma_i_hat.shape() != expected {
        return Err(CovarianceError::DimensionMismatch {
            what: "gamma_i_hat",
            expected: expected.0 * expected.1,
            found: gamma_i_hat.len(),
        });
    }
    Ok(())
}

/// Unit densities `f_i = (1/T) sum_t K_h(e_it)` and density-weighted regressor
/// means `gamma_i = sum_t K_h(e_it) X_it / (f_i T)`.
pub fn density_and_gamma(
    panel: &PanelData,
    fit: &FeqrFit,
    spec: &KernelSpec,
) -> Result<(Vec<f64>, DMatrix<f64>), CovarianceError> {
    check_dims(panel, fit)?;
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let mut f = vec![0.0; n];
    let mut gamma = DMatrix::zeros(n, p);
    let mut weights = vec![0.0; t];
    for i in 0..n {
        for (s, w) in weights.iter_mut().enumerate() {
            *w = kernel_weight(fit.residuals[(i, s)], spec);
        }
        let total = pairwise_sum_by(t, |s| weights[s]);
        if total == 0.0 {
            return Err(CovarianceError::ZeroDensity { unit: i });
        }
        f[i] = total / t as f64;
        for k in 0..p {
            gamma[(i, k)] = pairwise_sum_by(t, |s| weights[s] * panel.x_at(i, s)[k]) / total;
        }
    }
    Ok((f, gamma))
}

/// Period scores `m_t` (T x p, one row per period) and their mean.
pub fn m_hat(
    panel: &PanelData,
    fit: &FeqrFit,
    gamma_i_hat: &DMatrix<f64>,
    tau: QuantileLevel,
) -> Result<(DMatrix<f64>, DVector<f64>), CovarianceError> {
    check_dims(panel, fit)?;
    check_gamma_rows(panel, gamma_i_hat)?;
    let (n, t, p) = (panel.n_units(), panel.n_periods(), panel.n_regressors());
    let tv = tau.value();
    let mut rows = DMatrix::zeros(t, p);
    for s in 0..t {
        for k in 0..p {
            let sum = pairwise_sum_by(n, |i| {
                let ind = if fit.residuals[(i, s)] <= 0.0 { 1.0 } else { 0.0 };
                (tv - ind) * (panel.x_at(i, s)[k] - gamma_i_hat[(i, k)])
            });
            rows[(s, k)] = sum / n as f64;
        }
    }
    let mean = DVector::from_iterator(p, (0..p).map(|k| pairwise_sum_by(t, |s| rows[(s, k)]) / t as f64));
    Ok((rows, mean))
}

/// `(1/T) sum_t (m_t - m_bar)(m_t - m_bar)'`.
pub fn sigma_hat(m_rows: &DMatrix<f64>, m_bar: &DVector<f64>) -> DMatrix<f64> {
    let (t, p) = m_rows.shape();
    let mut out = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let v = pairwise_sum_by(t, |s| (m_rows[(s, a)] - m_bar[a]) * (m_rows[(s, b)] - m_bar[b])) / t as f64;
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// `(1/NT) sum_i sum_t K_h(e_it) X_it (X_it - gamma_i)'`, not symmetrized.
pub fn gamma_matrix_hat(
    panel: &PanelData,
    fit: &FeqrFit,
    gamma_i_hat: &DMatrix<f64>,
    spec: &KernelSpec,
) -> Result<DMatrix<f64>, CovarianceError> {
    check_dims(panel, fit)?;
    check_gamma_rows(panel, gamma_i_hat)?;
    let (t, p) = (panel.n_periods(), panel.n_regressors());
    let nt = panel.n_obs();
    let weights: Vec<f64> = (0..nt)
        .map(|h| kernel_weight(fit.residuals[(h / t, h % t)], spec))
        .collect();
    let mut out = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            out[(a, b)] = pairwise_sum_by(nt, |h| {
                let x = panel.x_obs(h);
                weights[h] * x[a] * (x[b] - gamma_i_hat[(h / t, b)])
            }) / nt as f64;
        }
    }
    Ok(out)
}

/// `tau(1 - tau)/(NT) sum_i sum_t (X_it - gamma_i)(X_it - gamma_i)'`.
pub fn independent_meat(
    panel: &PanelData,
    gamma_i_hat: &DMatrix<f64>,
    tau: QuantileLevel,
) -> Result<DMatrix<f64>, CovarianceError> {
    check_gamma_rows(panel, gamma_i_hat)?;
    let (t, p) = (panel.n_periods(), panel.n_regressors());
    let nt = panel.n_obs();
    let scale = tau.value() * (1.0 - tau.value()) / nt as f64;
    let mut out = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..=a {
            let v = scale
                * pairwise_sum_by(nt, |h| {
                    let x = panel.x_obs(h);
                    let i = h / t;
                    (x[a] - gamma_i_hat[(i, a)]) * (x[b] - gamma_i_hat[(i, b)])
                });
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}

/// `G^-1 M G^-1` with `G = (gamma + gamma')/2`, symmetrized.
pub fn sandwich(gamma_mat: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64), CovarianceError> {
    let mut bread = gamma_mat.clone();
    numeric::symmetrize(&mut bread);
    let inv = numeric::invert_symmetric(&bread, MAX_GAMMA_CONDITION).map_err(|(condition_number, eigenvalues)| {
        CovarianceError::SingularGamma {
            condition_number,
            eigenvalues,
        }
    })?;
    let mut v = &inv.inverse * meat * &inv.inverse;
    numeric::symmetrize(&mut v);
    Ok((v, inv.condition_number))
}

fn check_tau(fit: &FeqrFit, tau: QuantileLevel) -> Result<(), CovarianceError> {
    if fit.tau != tau {
        return Err(CovarianceError::TauMismatch {
            fit: fit.tau.value(),
            requested: tau.value(),
        });
    }
    Ok(())
}

/// The common-shock-robust sandwich estimate (rate sqrt(T)).
pub fn robust_covariance(
    panel: &PanelData,
    fit: &FeqrFit,
    tau: QuantileLevel,
    spec: &KernelSpec,
) -> Result<CovarianceEstimate, CovarianceError> {
    check_tau(fit, tau)?;
    let (f_i_hat, gamma_i_hat) = density_and_gamma(panel, fit, spec)?;
    let (rows, mean) = m_hat(panel, fit, &gamma_i_hat, tau)?;
    let sigma = sigma_hat(&rows, &mean);
    let gamma_mat = gamma_matrix_hat(panel, fit, &gamma_i_hat, spec)?;
    let (v_hat, gamma_condition) = sandwich(&gamma_mat, &sigma)?;
    Ok(CovarianceEstimate {
        sigma_hat: sigma,
        gamma_mat_hat: gamma_mat,
        gamma_i_hat,
        f_i_hat,
        v_hat,
        rate: CovarianceRate::RobustSqrtT,
        bandwidth: spec.bandwidth,
        gamma_condition,
    })
}

/// The conventional sandwich that assumes cross-sectional independence
/// (rate sqrt(NT)).
pub fn standard_covariance(
    panel: &PanelData,
    fit: &FeqrFit,
    tau: QuantileLevel,
    spec: &KernelSpec,
) -> Result<CovarianceEstimate, CovarianceError> {
    check_tau(fit, tau)?;
    let (f_i_hat, gamma_i_hat) = density_and_gamma(panel, fit, spec)?;
    let meat = independent_meat(panel, &gamma_i_hat, tau)?;
    let gamma_mat = gamma_matrix_hat(panel, fit, &gamma_i_hat, spec)?;
    let (v_hat, gamma_condition) = sandwich(&gamma_mat, &meat)?;
    Ok(CovarianceEstimate {
        sigma_hat: meat,
        gamma_mat_hat: gamma_mat,
        gamma_i_hat,
        f_i_hat,
        v_hat,
        rate: CovarianceRate::StandardSqrtNT,
        bandwidth: spec.bandwidth,
        gamma_condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_kernel_values() {
        let k1 = KernelSpec::gaussian(1.0).unwrap();
        let k2 = KernelSpec::gaussian(2.0).unwrap();
        assert!((kernel_weight(0.0, &k1) - 0.398_942_280_4).abs() < 1e-10);
        assert!((kernel_weight(0.0, &k2) - 0.199_471_140_2).abs() < 1e-10);
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
    }

    #[test]
    fn kernel_integrates_to_one() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let n = 16_000;
        let step = 16.0 / n as f64;
        let mut total = 0.5 * (kernel_weight(-8.0, &k) + kernel_weight(8.0, &k));
        for j in 1..n {
            total += kernel_weight(-8.0 + j as f64 * step, &k);
        }
        assert!((total * step - 1.0).abs() < 1e-6);
    }

    fn residuals_with_sd(sd: f64) -> DMatrix<f64> {
        // values +-a with sample sd exactly `sd` (two of each sign)
        let a = sd * (3.0_f64 / 4.0).sqrt();
        DMatrix::from_row_slice(2, 2, &[a, -a, a, -a])
    }

    #[test]
    fn silverman_examples() {
        let r = residuals_with_sd(1.0);
        let bw = silverman_bandwidth(&r, 1000).unwrap();
        assert!((bw.value - 1.06 * 1000f64.powf(-0.2)).abs() < 1e-12);
        assert!((bw.value - 0.266_25).abs() < 1e-5);
        assert!(!bw.floored);
        let bw = silverman_bandwidth(&residuals_with_sd(0.01), 1000).unwrap();
        assert_eq!(bw.value, 0.05);
        assert!(bw.floored);
        let bw = silverman_bandwidth(&residuals_with_sd(1.0), 1).unwrap();
        assert!((bw.value - 1.06).abs() < 1e-12);
        let nt = bandwidth_with_rule(&residuals_with_sd(1.0), 1, BandwidthRule::SilvermanNT).unwrap();
        assert!((nt.value - 1.06 * 4f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn silverman_degenerate_and_tiny_inputs() {
        let bw = silverman_bandwidth(&DMatrix::zeros(3, 3), 3).unwrap();
        assert!(bw.degenerate && bw.floored);
        assert_eq!(bw.value, BANDWIDTH_FLOOR);
        assert!(matches!(
            silverman_bandwidth(&DMatrix::zeros(1, 1), 1),
            Err(CovarianceError::TooFewResiduals(1))
        ));
    }

    #[test]
    fn sigma_hat_examples() {
        let one = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
        let mean = DVector::from_column_slice(&[0.3, -0.7]);
        assert_eq!(sigma_hat(&one, &mean), DMatrix::zeros(2, 2));

        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, -2.0]);
        let s = sigma_hat(&rows, &DVector::zeros(2));
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn scalar_sandwich() {
        let g = DMatrix::from_element(1, 1, 0.5);
        let s = DMatrix::from_element(1, 1, 0.2);
        let (v, _) = sandwich(&g, &s).unwrap();
        assert!((v[(0, 0)] - 0.2 / 0.25).abs() < 1e-15);
        let zero = DMatrix::zeros(1, 1);
        assert!(matches!(sandwich(&zero, &s), Err(CovarianceError::SingularGamma { .. })));
    }
}
