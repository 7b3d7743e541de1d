//! Wald confidence intervals for the common slope.

use thiserror::Error;

use crate::covariance::{CovarianceEstimate, CovarianceRate};
use crate::numeric::{normal_cdf, normal_pdf};
use crate::solver::FeqrFit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("variance of coefficient {index} is negative ({value:e})")]
    NegativeVariance { index: usize, value: f64 },
    #[error("covariance has dimension {found}, fit has {expected} slopes")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovarianceMethod {
    Robust,
    Standard,
}

impl CovarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            CovarianceMethod::Robust => "robust",
            CovarianceMethod::Standard => "standard",
        }
    }
}

impl From<CovarianceRate> for CovarianceMethod {
    fn from(rate: CovarianceRate) -> Self {
        match rate {
            CovarianceRate::RobustSqrtT => CovarianceMethod::Robust,
            CovarianceRate::StandardSqrtNT => CovarianceMethod::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceInterval {
    pub coefficient_index: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: CovarianceMethod,
    /// Zero standard error; the interval collapses to the estimate.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Standard errors together with a flag for clamped tiny negative variances.
#[derive(Debug, Clone, PartialEq)]
pub struct StdErrors {
    pub values: Vec<f64>,
    pub clamped: bool,
}

// Acklam's rational approximation to the normal quantile.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.024_25;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -acklam(1.0 - p)
    }
}

/// Inverse of the standard normal CDF.
pub fn normal_quantile(prob: f64) -> Result<f64, InferenceError> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(InferenceError::InvalidArgument(format!(
            "probability must lie in (0, 1), got {prob}"
        )));
    }
    if prob == 0.5 {
        return Ok(0.0);
    }
    let x = acklam(prob);
    // one Newton step on Phi(x) - prob, using the tail that keeps precision
    let e = if prob > 0.5 {
        (1.0 - prob) - normal_cdf(-x)
    } else {
        normal_cdf(x) - prob
    };
    Ok(x - e / normal_pdf(x))
}

pub fn std_errors(cov: &CovarianceEstimate, n_units: usize, n_periods: usize) -> Result<StdErrors, InferenceError> {
    if n_units == 0 || n_periods == 0 {
        return Err(InferenceError::InvalidArgument("N and T must be positive".into()));
    }
    let scale = match cov.rate {
        CovarianceRate::RobustSqrtT => n_periods as f64,
        CovarianceRate::StandardSqrtNT => (n_units * n_periods) as f64,
    };
    let p = cov.v_hat.nrows();
    let trace: f64 = (0..p).map(|j| cov.v_hat[(j, j)].abs()).sum();
    let mut clamped = false;
    let mut values = Vec::with_capacity(p);
    for j in 0..p {
        let v = cov.v_hat[(j, j)];
        if v.is_nan() || v < -1e-12 * trace {
            return Err(InferenceError::NegativeVariance { index: j, value: v });
        }
        if v < 0.0 {
            log::warn!("clamping variance {v:e} of coefficient {j} to zero");
            clamped = true;
        }
        values.push((v.max(0.0) / scale).sqrt());
    }
    Ok(StdErrors { values, clamped })
}

pub fn confidence_intervals(
    fit: &FeqrFit,
    cov: &CovarianceEstimate,
    level: f64,
) -> Result<Vec<ConfidenceInterval>, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    let beta = fit.beta();
    if cov.v_hat.nrows() != beta.len() {
        return Err(InferenceError::DimensionMismatch {
            expected: beta.len(),
            found: cov.v_hat.nrows(),
        });
    }
    let z = normal_quantile((1.0 + level) / 2.0)?;
    let se = std_errors(cov, fit.residuals.nrows(), fit.residuals.ncols())?;
    Ok(beta
        .iter()
        .zip(&se.values)
        .enumerate()
        .map(|(j, (&b, &s))| ConfidenceInterval {
            coefficient_index: j,
            estimate: b,
            std_error: s,
            lower: b - z * s,
            upper: b + z * s,
            level,
            method: cov.rate.into(),
            degenerate: s == 0.0,
        })
        .collect())
}
