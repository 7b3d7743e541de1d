//! Check loss, the fixed-effects quantile objective, residuals and the two
//! subgradient statistics of the objective.
//!
//! The indicator convention is `1{Y <= fitted}` (ties count as below) in the
//! subgradients, while the check loss kinks at `1{u < 0}`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::numeric::pairwise_sum_by;
use crate::panel::PanelData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QrError {
    #[error("quantile level must lie strictly inside (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unit index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("parameter {0} is not finite")]
    NonFiniteParameter(&'static str),
}

/// A quantile level `tau` in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self, QrError> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(QrError::InvalidQuantile(tau))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = QrError;
    fn try_from(tau: f64) -> Result<Self, QrError> {
        Self::new(tau)
    }
}

/// Unit intercepts `alpha` (length N) and common slope `beta` (length p).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { alpha, beta }
    }

    pub fn zeros(n_units: usize, n_regressors: usize) -> Self {
        Self::new(vec![0.0; n_units], vec![0.0; n_regressors])
    }

    /// Checks lengths against the panel and finiteness of every value.
    pub fn check(&self, panel: &PanelData) -> Result<(), QrError> {
        if self.alpha.len() != panel.n_units() {
            return Err(QrError::DimensionMismatch {
                what: "alpha",
                expected: panel.n_units(),
                found: self.alpha.len(),
            });
        }
        if self.beta.len() != panel.n_regressors() {
            return Err(QrError::DimensionMismatch {
                what: "beta",
                expected: panel.n_regressors(),
                found: self.beta.len(),
            });
        }
        if self.alpha.iter().any(|v| !v.is_finite()) {
            return Err(QrError::NonFiniteParameter("alpha"));
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(QrError::NonFiniteParameter("beta"));
        }
        Ok(())
    }
}

/// `rho_tau(u) = u * (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if u < 0.0 {
        u * (t - 1.0)
    } else {
        u * t
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Residual of flat observation `h`.
#[inline]
pub(crate) fn residual_at(panel: &PanelData, theta: &ParameterPoint, h: usize) -> f64 {
    let i = h / panel.n_periods();
    panel.y()[h] - theta.alpha[i] - dot(panel.x_obs(h), &theta.beta)
}

/// Residuals in unit-major order.
pub(crate) fn residual_vec(panel: &PanelData, theta: &ParameterPoint) -> Vec<f64> {
    (0..panel.n_obs())
        .map(|h| residual_at(panel, theta, h))
        .collect()
}

/// The objective averaged over all N*T observations.
pub fn objective(
    panel: &PanelData,
    theta: &ParameterPoint,
    tau: QuantileLevel,
) -> Result<f64, QrError> {
    theta.check(panel)?;
    Ok(objective_unchecked(panel, theta, tau))
}

pub(crate) fn objective_unchecked(panel: &PanelData, theta: &ParameterPoint, tau: QuantileLevel) -> f64 {
    let nt = panel.n_obs();
    pairwise_sum_by(nt, |h| check_loss(residual_at(panel, theta, h), tau)) / nt as f64
}

/// `Y_it - alpha_i - X_it' beta` as an N x T matrix.
pub fn residuals(panel: &PanelData, theta: &ParameterPoint) -> Result<DMatrix<f64>, QrError> {
    theta.check(panel)?;
    Ok(DMatrix::from_row_slice(
        panel.n_units(),
        panel.n_periods(),
        &residual_vec(panel, theta),
    ))
}

#[inline]
fn score(tau: f64, resid: f64) -> f64 {
    // resid <= 0  <=>  Y <= alpha + X'beta
    if resid <= 0.0 {
        tau - 1.0
    } else {
        tau
    }
}

/// `(1/T) sum_t (tau - 1{Y_it <= alpha_i + X_it' beta})` for one unit.
pub fn subgrad_h1(
    panel: &PanelData,
    unit: usize,
    theta: &ParameterPoint,
    tau: QuantileLevel,
) -> Result<f64, QrError> {
    if unit >= panel.n_units() {
        return Err(QrError::IndexOutOfRange {
            index: unit,
            len: panel.n_units(),
        });
    }
    theta.check(panel)?;
    Ok(h1_unchecked(panel, unit, theta, tau))
}

fn h1_unchecked(panel: &PanelData, unit: usize, theta: &ParameterPoint, tau: QuantileLevel) -> f64 {
    let t = panel.n_periods();
    let base = unit * t;
    pairwise_sum_by(t, |s| score(tau.value(), residual_at(panel, theta, base + s))) / t as f64
}

/// `H1` for every unit.
pub fn subgrad_h1_all(
    panel: &PanelData,
    theta: &ParameterPoint,
    tau: QuantileLevel,
) -> Result<Vec<f64>, QrError> {
    theta.check(panel)?;
    Ok((0..panel.n_units())
        .map(|i| h1_unchecked(panel, i, theta, tau))
        .collect())
}

/// `(1/(NT)) sum_i sum_t (tau - 1{Y_it <= alpha_i + X_it' beta}) X_it`.
pub fn subgrad_h2(
    panel: &PanelData,
    theta: &ParameterPoint,
    tau: QuantileLevel,
) -> Result<Vec<f64>, QrError> {
    theta.check(panel)?;
    let nt = panel.n_obs();
    let signs: Vec<f64> = (0..nt)
        .map(|h| score(tau.value(), residual_at(panel, theta, h)))
        .collect();
    Ok((0..panel.n_regressors())
        .map(|k| pairwise_sum_by(nt, |h| signs[h] * panel.x_obs(h)[k]) / nt as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    fn two_point() -> PanelData {
        PanelData::with_default_ids(1, 2, 1, vec![1.0, 3.0], vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(1e-12).is_ok());
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(0.0, q(0.3)), 0.0);
        assert_eq!(check_loss(3.0, q(0.5)), 1.5);
        assert_eq!(check_loss(-2.0, q(0.25)), 1.5);
    }

    #[test]
    fn objective_examples() {
        let p = two_point();
        let exact = ParameterPoint::new(vec![1.0], vec![2.0]);
        assert_eq!(objective(&p, &exact, q(0.5)).unwrap(), 0.0);
        let zero = ParameterPoint::zeros(1, 1);
        let termwise = (check_loss(1.0, q(0.5)) + check_loss(3.0, q(0.5))) / 2.0;
        assert_eq!(objective(&p, &zero, q(0.5)).unwrap(), 1.0);
        assert_eq!(termwise, 1.0);
    }

    #[test]
    fn objective_rejects_bad_dimensions() {
        let p = two_point();
        let bad = ParameterPoint::new(vec![0.0, 0.0], vec![0.0]);
        assert!(matches!(
            objective(&p, &bad, q(0.5)),
            Err(QrError::DimensionMismatch { what: "alpha", .. })
        ));
        let bad = ParameterPoint::new(vec![0.0], vec![]);
        assert!(residuals(&p, &bad).is_err());
    }

    #[test]
    fn residual_examples() {
        let p = PanelData::with_default_ids(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 0.0, 2.0, 1.0]).unwrap();
        let r = residuals(&p, &ParameterPoint::zeros(2, 1)).unwrap();
        assert_eq!(r, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let theta = ParameterPoint::new(vec![0.5, -1.0], vec![0.25]);
        let shifted = ParameterPoint::new(vec![0.5, -1.0 + 2.0], vec![0.25]);
        let a = residuals(&p, &theta).unwrap();
        let b = residuals(&p, &shifted).unwrap();
        assert_eq!(a.row(0), b.row(0));
        for t in 0..2 {
            assert!((a[(1, t)] - 2.0 - b[(1, t)]).abs() < 1e-15);
        }
        let exact = two_point();
        let r = residuals(&exact, &ParameterPoint::new(vec![1.0], vec![2.0])).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn h1_examples() {
        let p = PanelData::with_default_ids(1, 4, 1, vec![1.0, 2.0, -1.0, -2.0], vec![0.0; 4]).unwrap();
        let theta = ParameterPoint::zeros(1, 1);
        assert_eq!(subgrad_h1(&p, 0, &theta, q(0.5)).unwrap(), 0.0);
        let up = ParameterPoint::new(vec![-10.0], vec![0.0]);
        assert_eq!(subgrad_h1(&p, 0, &up, q(0.3)).unwrap(), 0.3);
        let down = ParameterPoint::new(vec![10.0], vec![0.0]);
        assert!((subgrad_h1(&p, 0, &down, q(0.3)).unwrap() - (0.3 - 1.0)).abs() < 1e-15);
        assert!(matches!(
            subgrad_h1(&p, 1, &theta, q(0.5)),
            Err(QrError::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn h1_tie_counts_as_below() {
        let p = PanelData::with_default_ids(1, 1, 1, vec![0.0], vec![0.0]).unwrap();
        let v = subgrad_h1(&p, 0, &ParameterPoint::zeros(1, 1), q(0.5)).unwrap();
        assert_eq!(v, -0.5);
    }

    #[test]
    fn h2_examples() {
        let p = PanelData::with_default_ids(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]).unwrap();
        assert_eq!(subgrad_h2(&p, &ParameterPoint::zeros(2, 1), q(0.4)).unwrap(), vec![0.0]);

        let x = vec![1.0, 2.0, 3.0, 6.0];
        let p = PanelData::with_default_ids(2, 2, 1, vec![100.0; 4], x.clone()).unwrap();
        let v = subgrad_h2(&p, &ParameterPoint::zeros(2, 1), q(0.4)).unwrap();
        assert!((v[0] - 0.4 * 3.0).abs() < 1e-15);

        // hand case against a plain double loop
        let y = vec![0.3, -1.2, 2.2, 0.1];
        let x = vec![0.5, 1.5, -0.7, 2.0];
        let p = PanelData::with_default_ids(2, 2, 1, y.clone(), x.clone()).unwrap();
        let theta = ParameterPoint::new(vec![0.1, 0.4], vec![0.6]);
        let tau = 0.35;
        let mut oracle = 0.0;
        for i in 0..2 {
            for t in 0..2 {
                let h = i * 2 + t;
                let fitted = theta.alpha[i] + x[h] * theta.beta[0];
                let ind = if y[h] <= fitted { 1.0 } else { 0.0 };
                oracle += (tau - ind) * x[h];
            }
        }
        oracle /= 4.0;
        let v = subgrad_h2(&p, &theta, q(tau)).unwrap();
        assert!((v[0] - oracle).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn check_loss_is_convex(u in -50.0..50.0f64, v in -50.0..50.0f64, lam in 0.0..=1.0f64, tau in 0.01..0.99f64) {
            let t = q(tau);
            let lhs = check_loss(lam * u + (1.0 - lam) * v, t);
            let rhs = lam * check_loss(u, t) + (1.0 - lam) * check_loss(v, t);
            prop_assert!(lhs <= rhs + 1e-12);
            prop_assert!(check_loss(u, t) >= 0.0);
        }

        #[test]
        fn check_loss_is_positively_homogeneous(u in -50.0..50.0f64, c in 0.01..20.0f64, tau in 0.01..0.99f64) {
            let t = q(tau);
            let a = check_loss(c * u, t);
            let b = c * check_loss(u, t);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn check_loss_slopes(u in 0.01..50.0f64, tau in 0.01..0.99f64) {
            let t = q(tau);
            let eps = 1e-6;
            let right = (check_loss(u + eps, t) - check_loss(u - eps, t)) / (2.0 * eps);
            let left = (check_loss(-u + eps, t) - check_loss(-u - eps, t)) / (2.0 * eps);
            prop_assert!((right - tau).abs() < 1e-6);
            prop_assert!((left - (tau - 1.0)).abs() < 1e-6);
        }

        #[test]
        fn objective_scales_with_data(
            y in proptest::collection::vec(-5.0..5.0f64, 6),
            x in proptest::collection::vec(-5.0..5.0f64, 6),
            a in proptest::collection::vec(-2.0..2.0f64, 2),
            b in -2.0..2.0f64,
            c in 0.1..10.0f64,
            tau in 0.05..0.95f64,
        ) {
            let t = q(tau);
            let p = PanelData::with_default_ids(2, 3, 1, y.clone(), x.clone()).unwrap();
            let theta = ParameterPoint::new(a.clone(), vec![b]);
            let scaled = PanelData::with_default_ids(2, 3, 1, y.iter().map(|v| c * v).collect(), x.clone()).unwrap();
            let theta_c = ParameterPoint::new(a.iter().map(|v| c * v).collect(), vec![c * b]);
            let lhs = objective(&scaled, &theta_c, t).unwrap();
            let rhs = c * objective(&p, &theta, t).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn subgradients_are_bounded(
            y in proptest::collection::vec(-5.0..5.0f64, 8),
            x in proptest::collection::vec(-5.0..5.0f64, 8),
            a in proptest::collection::vec(-2.0..2.0f64, 2),
            b in -2.0..2.0f64,
            tau in 0.05..0.95f64,
        ) {
            let t = q(tau);
            let p = PanelData::with_default_ids(2, 4, 1, y, x).unwrap();
            let theta = ParameterPoint::new(a, vec![b]);
            for h in subgrad_h1_all(&p, &theta, t).unwrap() {
                prop_assert!(h >= tau - 1.0 - 1e-15 && h <= tau + 1e-15);
            }
            let bound = crate::panel::regressor_bound(&p);
            for h in subgrad_h2(&p, &theta, t).unwrap() {
                prop_assert!(h.abs() <= bound + 1e-12);
            }
        }
    }
}
