use feqr::covariance::{CovarianceEstimate, CovarianceRate};
use feqr::inference::{confidence_intervals, normal_quantile, std_errors, InferenceError};
use feqr::solver::{fit_feqr, SolverOptions};
use feqr::{PanelData, QuantileLevel};
use nalgebra::DMatrix;
use statrs::function::erf::erfc;

/// Standard normal CDF from the statrs complementary error function.
fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Root of `phi(x) = p` by bisection on the oracle CDF.
fn oracle_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn estimate(v: f64, rate: CovarianceRate) -> CovarianceEstimate {
    let m = DMatrix::from_element(1, 1, v);
    CovarianceEstimate {
        sigma_hat: m.clone(),
        gamma_mat_hat: DMatrix::identity(1, 1),
        gamma_i_hat: DMatrix::zeros(1, 1),
        f_i_hat: vec![1.0],
        v_hat: m,
        rate,
        bandwidth: 1.0,
        gamma_condition: 1.0,
    }
}

#[test]
fn quantile_matches_the_oracle() {
    assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
    assert!((normal_quantile(0.975).unwrap() - oracle_quantile(0.975)).abs() < 1e-9);
    assert!((normal_quantile(0.975).unwrap() - 1.959_963_98).abs() < 1e-8);
    assert!((normal_quantile(0.75).unwrap() - 0.674_489_75).abs() < 1e-8);
    for k in 1..1000 {
        let p = k as f64 / 1000.0;
        assert!((normal_quantile(p).unwrap() - oracle_quantile(p)).abs() < 1e-9, "p = {p}");
    }
    for p in [1e-12, 1e-6, 0.01, 0.99, 1.0 - 1e-6] {
        assert!((normal_quantile(p).unwrap() - oracle_quantile(p)).abs() < 1e-9, "p = {p}");
    }
}

#[test]
fn quantile_inverts_the_cdf_on_a_grid() {
    for k in 0..1000 {
        let x = -6.0 + 12.0 * (k as f64 + 0.5) / 1000.0;
        let back = normal_quantile(phi(x)).unwrap();
        assert!((back - x).abs() < 1e-8, "x = {x}: {back}");
    }
}

#[test]
fn quantile_rejects_the_boundary() {
    for p in [0.0, 1.0, -1.0, 2.0, f64::NAN] {
        assert!(matches!(normal_quantile(p), Err(InferenceError::InvalidArgument(_))));
    }
}

#[test]
fn standard_errors_use_the_rate() {
    let robust = std_errors(&estimate(4.0, CovarianceRate::RobustSqrtT), 100, 100).unwrap();
    assert!((robust.values[0] - 0.2).abs() < 1e-15);
    let standard = std_errors(&estimate(4.0, CovarianceRate::StandardSqrtNT), 100, 100).unwrap();
    assert!((standard.values[0] - 0.02).abs() < 1e-15);
    let zero = std_errors(&estimate(0.0, CovarianceRate::RobustSqrtT), 10, 10).unwrap();
    assert_eq!(zero.values[0], 0.0);
    assert!(!zero.clamped);
}

#[test]
fn negative_variances() {
    // tiny negatives are clamped, anything beyond rounding is an error
    let tiny = std_errors(&estimate(-1e-300, CovarianceRate::RobustSqrtT), 10, 10);
    assert!(matches!(tiny, Err(InferenceError::NegativeVariance { .. })) || tiny.unwrap().clamped);
    let mut est = estimate(1.0, CovarianceRate::RobustSqrtT);
    est.v_hat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]);
    let se = std_errors(&est, 10, 10).unwrap();
    assert!(se.clamped && se.values[1] == 0.0);
    est.v_hat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
    assert!(matches!(std_errors(&est, 10, 10), Err(InferenceError::NegativeVariance { index: 1, .. })));
}

fn fitted() -> feqr::FeqrFit {
    // one unit through (0, 0) and (1, 1); beta-hat = 1
    let panel = PanelData::with_default_ids(1, 2, 1, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
    fit_feqr(&panel, QuantileLevel::new(0.5).unwrap(), &SolverOptions::default()).unwrap()
}

#[test]
fn interval_examples() {
    let fit = fitted();
    assert!((fit.beta()[0] - 1.0).abs() < 1e-12);
    // T = 2, so V = 0.08 gives se = 0.2
    let ci = &confidence_intervals(&fit, &estimate(0.08, CovarianceRate::RobustSqrtT), 0.95).unwrap()[0];
    let z = oracle_quantile(0.975);
    assert!((ci.std_error - 0.2).abs() < 1e-15);
    assert!((ci.lower - (fit.beta()[0] - z * 0.2)).abs() < 1e-9);
    assert!((ci.lower - 0.608).abs() < 1e-3 && (ci.upper - 1.392).abs() < 1e-3);
    assert!((ci.upper - ci.lower - 2.0 * z * ci.std_error).abs() < 1e-9);
    assert_eq!(0.5 * (ci.lower + ci.upper), ci.estimate);

    let half = &confidence_intervals(&fit, &estimate(0.08, CovarianceRate::RobustSqrtT), 0.5).unwrap()[0];
    assert!(((half.upper - half.lower) / 2.0 - oracle_quantile(0.75) * 0.2).abs() < 1e-9);
    assert!(half.lower > ci.lower && half.upper < ci.upper);

    let flat = &confidence_intervals(&fit, &estimate(0.0, CovarianceRate::RobustSqrtT), 0.95).unwrap()[0];
    assert!(flat.degenerate && flat.lower == flat.upper);

    for bad in [0.0, 1.0, 1.5] {
        assert!(confidence_intervals(&fit, &estimate(0.08, CovarianceRate::RobustSqrtT), bad).is_err());
    }
}

#[test]
fn intervals_nest_across_levels() {
    let fit = fitted();
    let est = estimate(0.3, CovarianceRate::StandardSqrtNT);
    let mut previous: Option<(f64, f64)> = None;
    for level in [0.1, 0.5, 0.8, 0.9, 0.95, 0.99] {
        let ci = &confidence_intervals(&fit, &est, level).unwrap()[0];
        assert!(ci.lower < ci.estimate && ci.estimate < ci.upper);
        if let Some((lo, hi)) = previous {
            assert!(ci.lower < lo && ci.upper > hi);
        }
        previous = Some((ci.lower, ci.upper));
    }
}
