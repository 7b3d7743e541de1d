//! Python bindings for `feqr`.

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use feqr::covariance::{self, BandwidthRule, CovarianceRate, KernelSpec};
use feqr::simulation::{self, DgpConfig, StudyConfig};
use feqr::solver::{self, SolverOptions};
use feqr::{inference, panel, qrcore, ParameterPoint, QuantileLevel};

create_exception!(pyfeqr, FeqrError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    FeqrError::new_err(e.to_string())
}

fn level(tau: f64) -> PyResult<QuantileLevel> {
    QuantileLevel::new(tau).map_err(err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn rule(name: &str) -> PyResult<BandwidthRule> {
    match name {
        "SilvermanN" => Ok(BandwidthRule::SilvermanN),
        "SilvermanNT" => Ok(BandwidthRule::SilvermanNT),
        other => Err(err(format!("bandwidth_rule must be 'SilvermanN' or 'SilvermanNT', got {other:?}"))),
    }
}

/// Balanced panel. `y` is unit-major (length N*T); `x` is unit-major with the
/// p regressors of each observation contiguous (length N*T*p).
#[pyclass(name = "PanelData", frozen)]
struct PyPanel {
    inner: panel::PanelData,
}

#[pymethods]
impl PyPanel {
    #[new]
    fn new(n_units: usize, n_periods: usize, n_regressors: usize, y: Vec<f64>, x: Vec<f64>) -> PyResult<Self> {
        let inner = panel::PanelData::with_default_ids(n_units, n_periods, n_regressors, y, x).map_err(err)?;
        Ok(Self { inner })
    }

    /// Loads a long-format CSV (`unit,time,y,x1,...`).
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let inner = panel::load_panel_path(path, &panel::Schema::default()).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        panel::save_panel_path(&self.inner, path).map_err(err)
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.n_periods()
    }

    #[getter]
    fn n_regressors(&self) -> usize {
        self.inner.n_regressors()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x().to_vec()
    }

    fn regressor_bound(&self) -> f64 {
        panel::regressor_bound(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "PanelData(n_units={}, n_periods={}, n_regressors={})",
            self.inner.n_units(),
            self.inner.n_periods(),
            self.inner.n_regressors()
        )
    }
}

#[pyclass(name = "Fit", frozen)]
struct PyFit {
    inner: solver::FeqrFit,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau.value()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta().to_vec()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.objective_value
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// N x T residuals as nested lists.
    #[getter]
    fn residuals(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.residuals)
    }

    #[getter]
    fn certificate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner.certificate;
        let d = PyDict::new(py);
        d.set_item("passes", c.passes)?;
        d.set_item("max_h1", c.max_h1)?;
        d.set_item("bound_h1", c.bound_h1)?;
        d.set_item("h2_norm", c.h2_norm)?;
        d.set_item("bound_h2", c.bound_h2)?;
        d.set_item("tolerance", c.tolerance)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Fit(tau={}, beta={:?}, objective={})", self.tau(), self.inner.beta(), self.inner.objective_value)
    }
}

#[pyclass(name = "CovarianceEstimate", frozen)]
struct PyCovariance {
    inner: covariance::CovarianceEstimate,
}

#[pymethods]
impl PyCovariance {
    #[getter]
    fn v_hat(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.v_hat)
    }

    #[getter]
    fn sigma_hat(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.sigma_hat)
    }

    #[getter]
    fn gamma_mat_hat(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.gamma_mat_hat)
    }

    #[getter]
    fn gamma_i_hat(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.gamma_i_hat)
    }

    #[getter]
    fn f_i_hat(&self) -> Vec<f64> {
        self.inner.f_i_hat.clone()
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth
    }

    /// "sqrt_T" for the robust estimate, "sqrt_NT" for the standard one.
    #[getter]
    fn rate(&self) -> &'static str {
        match self.inner.rate {
            CovarianceRate::RobustSqrtT => "sqrt_T",
            CovarianceRate::StandardSqrtNT => "sqrt_NT",
        }
    }

    fn std_errors(&self, n_units: usize, n_periods: usize) -> PyResult<Vec<f64>> {
        Ok(inference::std_errors(&self.inner, n_units, n_periods).map_err(err)?.values)
    }
}

#[pyfunction]
#[pyo3(signature = (panel, tau, max_iterations=200, duality_gap_tol=1e-9, tol_cert=1e-6, refine=true))]
fn fit(
    panel: &PyPanel,
    tau: f64,
    max_iterations: usize,
    duality_gap_tol: f64,
    tol_cert: f64,
    refine: bool,
) -> PyResult<PyFit> {
    let opts = SolverOptions {
        max_iterations,
        duality_gap_tol,
        tol_cert,
        refine,
    };
    let inner = solver::fit_feqr(&panel.inner, level(tau)?, &opts).map_err(err)?;
    Ok(PyFit { inner })
}

/// Fits each level in turn with warm starts; raises on the first failure.
#[pyfunction]
fn fit_path(panel: &PyPanel, taus: Vec<f64>) -> PyResult<Vec<PyFit>> {
    let levels = taus.into_iter().map(level).collect::<PyResult<Vec<_>>>()?;
    solver::fit_path(&panel.inner, &levels, &SolverOptions::default())
        .map_err(err)?
        .into_iter()
        .map(|f| f.map(|inner| PyFit { inner }).map_err(err))
        .collect()
}

fn kernel_for(fit: &PyFit, bandwidth: Option<f64>, bandwidth_rule: &str) -> PyResult<KernelSpec> {
    match bandwidth {
        Some(h) => KernelSpec::gaussian(h).map_err(err),
        None => KernelSpec::from_fit(&fit.inner, rule(bandwidth_rule)?).map_err(err),
    }
}

#[pyfunction]
#[pyo3(signature = (panel, fit, bandwidth=None, bandwidth_rule="SilvermanN"))]
fn robust_covariance(panel: &PyPanel, fit: &PyFit, bandwidth: Option<f64>, bandwidth_rule: &str) -> PyResult<PyCovariance> {
    let kernel = kernel_for(fit, bandwidth, bandwidth_rule)?;
    let inner = covariance::robust_covariance(&panel.inner, &fit.inner, fit.inner.tau, &kernel).map_err(err)?;
    Ok(PyCovariance { inner })
}

#[pyfunction]
#[pyo3(signature = (panel, fit, bandwidth=None, bandwidth_rule="SilvermanN"))]
fn standard_covariance(
    panel: &PyPanel,
    fit: &PyFit,
    bandwidth: Option<f64>,
    bandwidth_rule: &str,
) -> PyResult<PyCovariance> {
    let kernel = kernel_for(fit, bandwidth, bandwidth_rule)?;
    let inner = covariance::standard_covariance(&panel.inner, &fit.inner, fit.inner.tau, &kernel).map_err(err)?;
    Ok(PyCovariance { inner })
}

/// One dict per slope coefficient.
#[pyfunction]
#[pyo3(signature = (fit, cov, level=0.95))]
fn confidence_intervals<'py>(
    py: Python<'py>,
    fit: &PyFit,
    cov: &PyCovariance,
    level: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cis = inference::confidence_intervals(&fit.inner, &cov.inner, level).map_err(err)?;
    cis.iter()
        .map(|ci| {
            let d = PyDict::new(py);
            d.set_item("coefficient_index", ci.coefficient_index)?;
            d.set_item("estimate", ci.estimate)?;
            d.set_item("std_error", ci.std_error)?;
            d.set_item("lower", ci.lower)?;
            d.set_item("upper", ci.upper)?;
            d.set_item("level", ci.level)?;
            d.set_item("method", ci.method.name())?;
            d.set_item("degenerate", ci.degenerate)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (n_units, n_periods, seed, replication=0, common_shock=true, beta=1.0, gamma_scale=0.2))]
fn generate_panel(
    n_units: usize,
    n_periods: usize,
    seed: u64,
    replication: u64,
    common_shock: bool,
    beta: f64,
    gamma_scale: f64,
) -> PyResult<PyPanel> {
    let dgp = DgpConfig {
        beta,
        gamma_scale,
        n_units,
        n_periods,
        common_shock,
        base_seed: seed,
        ..DgpConfig::default()
    };
    let inner = simulation::generate_panel(&dgp, replication).map_err(err)?;
    Ok(PyPanel { inner })
}

/// Runs a Monte Carlo study and returns one dict per quantile level.
#[pyfunction]
#[pyo3(signature = (n_units, n_periods, taus, replications, seed=20240601, common_shock=true, level=0.95, workers=1))]
#[allow(clippy::too_many_arguments)]
fn run_study<'py>(
    py: Python<'py>,
    n_units: usize,
    n_periods: usize,
    taus: Vec<f64>,
    replications: usize,
    seed: u64,
    common_shock: bool,
    level: f64,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let config = StudyConfig {
        dgp: DgpConfig {
            n_units,
            n_periods,
            taus: taus.into_iter().map(self::level).collect::<PyResult<_>>()?,
            common_shock,
            base_seed: seed,
            ..DgpConfig::default()
        },
        replications,
        level,
        workers,
        ..StudyConfig::default()
    };
    let report = py.detach(|| simulation::run_study(&config)).map_err(err)?;
    report
        .cells
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("n_units", c.n_units)?;
            d.set_item("n_periods", c.n_periods)?;
            d.set_item("tau", c.tau)?;
            d.set_item("bias", c.bias)?;
            d.set_item("rmse", c.rmse)?;
            d.set_item("coverage_robust", c.coverage_robust)?;
            d.set_item("coverage_standard", c.coverage_standard)?;
            d.set_item("mean_ci_width_robust", c.mean_ci_width_robust)?;
            d.set_item("mean_ci_width_standard", c.mean_ci_width_standard)?;
            d.set_item("n_failed", c.n_failed)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (tau, beta=1.0, gamma_scale=0.2))]
fn true_slope(tau: f64, beta: f64, gamma_scale: f64) -> PyResult<f64> {
    Ok(simulation::true_slope(level(tau)?, beta, gamma_scale))
}

#[pyfunction]
fn normal_quantile(prob: f64) -> PyResult<f64> {
    inference::normal_quantile(prob).map_err(err)
}

#[pyfunction]
fn check_loss(u: f64, tau: f64) -> PyResult<f64> {
    Ok(qrcore::check_loss(u, level(tau)?))
}

#[pyfunction]
fn objective(panel: &PyPanel, alpha: Vec<f64>, beta: Vec<f64>, tau: f64) -> PyResult<f64> {
    qrcore::objective(&panel.inner, &ParameterPoint::new(alpha, beta), level(tau)?).map_err(err)
}

#[pymodule]
fn pyfeqr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FeqrError", m.py().get_type::<FeqrError>())?;
    m.add_class::<PyPanel>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyCovariance>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_path, m)?)?;
    m.add_function(wrap_pyfunction!(robust_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(standard_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_intervals, m)?)?;
    m.add_function(wrap_pyfunction!(generate_panel, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(true_slope, m)?)?;
    m.add_function(wrap_pyfunction!(normal_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(check_loss, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    Ok(())
}
